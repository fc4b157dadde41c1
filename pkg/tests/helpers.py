from qswitch.fluid_model import FluidParams
from qswitch.rng import ArrivalSpec
from qswitch.w_switch import WParams


def reference_w(lam1=0.15, lam2=0.12) -> WParams:
    """Asymmetric W system; all three transient cases occur in its stable region."""
    return WParams(
        ArrivalSpec.bernoulli(lam1), ArrivalSpec.bernoulli(lam2),
        ArrivalSpec.poisson(0.9), ArrivalSpec.poisson(0.5), ArrivalSpec.poisson(0.4),
        gamma=0.2, p=0.9,
    )


# Hand-integrated fluid instances: c12 = 2 throughout.
CASE1 = FluidParams.from_bars(0.4, 0.4, 2.0, 1.5, 1.5, 1.6, 1.6)
CASE2 = FluidParams.from_bars(0.1, 0.9, 2.0, 1.8, 1.2, None, 1.25)
CASE3 = FluidParams.from_bars(0.2, 0.7, 2.0, 1.8, 0.6, None, 0.9)
