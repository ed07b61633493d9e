"""macroalloc: reproducible backtesting for LLM-driven sector allocation.

Core flow: point-in-time stores (bars, index membership, macro releases,
news sentiment memory) feed daily ranking prompts; a chat-completion
gateway with record/replay cassettes produces reflections and structured
trade decisions; a fixed-point portfolio simulator executes them under
capital, conflict, reversal and delisting rules.
"""

__version__ = "0.1.0"
