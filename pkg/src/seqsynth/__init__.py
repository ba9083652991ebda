"""Sequential conditional synthesis of tabular microdata, with inference and disclosure control."""

from .combine import (AnalysisSpec, CombinedEstimate, PerSynthesisEstimates, PooledStats, analyze_synthetic, combine,
                      pool, var_TM, var_TM_adjusted, var_Tp, var_Ts, var_TsDE, var_TsPPD)
from .engine import SynthesisOutput, SynthesisPlan, synthesize, synthesize_stratified
from .fitgen import CartControls, MethodSpec
from .rules import Rule
from .sdc import SdcPolicy, apply_sdc, label_faux, remove_replicated_uniques, top_bottom_code, write_output
from .tabular import DataTable, Schema, VariableDef, encode_design, parse_csv, split_missingness, write_csv
from .utility import compare_coefficients, compare_marginals

__version__ = "0.1.0"
