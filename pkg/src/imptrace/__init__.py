"""imptrace: a static analyzer for a JavaScript-like core language that
halts on watched-variable imprecision, traces the imprecision back to its
origin, classifies the cause, and refines the analysis configuration."""

__version__ = "0.1.0"
