"""3-lead ECG arrhythmia classifier with lead-wise attention, an auxiliary
heartbeat-count head and demographic fusion, on a small numpy autodiff kernel."""

__version__ = "0.1.0"
