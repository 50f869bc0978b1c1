"""ETF price forecasting and ESG-weighted Sharpe portfolio optimisation."""

__version__ = "0.1.0"
