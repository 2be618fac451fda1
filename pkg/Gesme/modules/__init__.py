from .base import BaseModule, GROUP_ARCHITECTURE, GROUP_WEIGHTING
from .layers import ConvRnnCell, DenseLayer, FeatureWeightingLayer, GruCell
from .moe import ConvExpert, ConvRnnExpert, GateNetwork, GruExpert, MixtureLayer, MixtureStack, ZoneGruExpert

__all__ = [
    'BaseModule', 'GROUP_ARCHITECTURE', 'GROUP_WEIGHTING',
    'ConvRnnCell', 'DenseLayer', 'FeatureWeightingLayer', 'GruCell',
    'ConvExpert', 'ConvRnnExpert', 'GateNetwork', 'GruExpert', 'MixtureLayer', 'MixtureStack', 'ZoneGruExpert',
]
