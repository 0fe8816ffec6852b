"""pickline: multi-agent PPO and rule-based control for a simulated
automated order-picking line."""

__version__ = "0.1.0"
