"""Monte Carlo simulation of jump-type McKean-Vlasov SDEs with particle systems."""

__version__ = "0.1.0"
