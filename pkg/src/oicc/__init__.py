"""oicc: an obfuscating compiler for a one-instruction (add-compare-jump)
machine, with a tracing interpreter and a statistical trace-analysis
harness.

Recompiling a program under different seeds yields object code that is
identical except for its embedded constants; a run's stored values differ
from their nominal values by per-slot random offsets, uniform over the
32-bit space and independent except where copies and loops force slots to
coincide.
"""

from .analysis import (
    DiffReport,
    Ensemble,
    Linkage,
    LockstepReport,
    StatReport,
    TracePosition,
    chi2_indep,
    chi2_uniform,
    ensemble,
    linkage,
    lockstep_check,
    position_samples,
    reference_eval,
    rekey,
    structural_diff,
    wilson_hilferty_sf,
)
from .codegen import (
    CompileOptions,
    NominalCode,
    ObfuscationScheme,
    VerifyReport,
    compile_checked,
    lower_nominal,
    randomize,
    verify_scheme,
)
from .frontend import CheckedAst, ParseError, SemanticErrors, check, parse, parse_and_check
from .isa import (
    DEFAULT_FUEL,
    Instruction,
    MachineState,
    ObjectCode,
    RunResult,
    RunStatus,
    Trace,
    TraceRecord,
    lt_wrap,
    run,
    step,
    wrap_add,
)

__version__ = "0.1.0"

__all__ = [
    "CheckedAst",
    "CompileOptions",
    "DEFAULT_FUEL",
    "DiffReport",
    "Ensemble",
    "Instruction",
    "Linkage",
    "LockstepReport",
    "MachineState",
    "NominalCode",
    "ObfuscationScheme",
    "ObjectCode",
    "ParseError",
    "RunResult",
    "RunStatus",
    "SemanticErrors",
    "StatReport",
    "Trace",
    "TracePosition",
    "TraceRecord",
    "VerifyReport",
    "check",
    "chi2_indep",
    "chi2_uniform",
    "compile_checked",
    "ensemble",
    "linkage",
    "lockstep_check",
    "lower_nominal",
    "lt_wrap",
    "parse",
    "parse_and_check",
    "position_samples",
    "randomize",
    "reference_eval",
    "rekey",
    "run",
    "step",
    "structural_diff",
    "verify_scheme",
    "wilson_hilferty_sf",
    "wrap_add",
]
