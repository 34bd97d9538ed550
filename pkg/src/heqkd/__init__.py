"""Finite-key rate modelling for polarization/time-bin hyperentangled QKD.

Modules: ``pair_source`` (SPDC statistics), ``qber_model`` (analytic error
rates), ``finite_key`` (key-length bounds), ``quantum_state`` (bases and
crosstalk), ``key_optimizer`` (pump/basis optimization), ``sat_link`` (link
budget and passes), ``phase_stab`` (phase-tracking loop), ``mc_oracle``
(Monte Carlo cross-check) and ``cli``.
"""
__version__ = "0.1.0"
