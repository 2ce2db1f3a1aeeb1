"""Feature-cell swap counterfactual explanations for EEG spectrogram classifiers."""
from eegcf._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
