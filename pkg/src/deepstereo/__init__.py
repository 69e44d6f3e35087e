"""End-to-end stereo matching with a learned two-stream cost-aggregation stage.

Pipeline: Siamese feature extraction -> shift-and-concat feature volume ->
3-D auto-encoder cost volume -> proposal/guidance aggregation -> soft-argmin
disparity, trained with RMSProp on synthetic random-dot stereograms. All
numerics run on the in-package tape autodiff engine.
"""

__version__ = "0.1.0"
