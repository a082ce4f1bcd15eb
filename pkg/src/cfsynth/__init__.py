"""cfsynth: model-based counterfactual synthesizer for tabular classifiers.

Train a conditional generative network once, then sample counterfactuals
for any query with a forward pass: umbrella-sampled training queries keep
rare attribute values covered, and a DAG-structured generator bakes
attribute causal dependence into the samples.
"""

from .causal_eval import causation_score, cds_fitness, anm_fitness, hsic
from .causal_generator import CausalGraph, ModularGenerator, validate_dag
from .classifiers import (
    Classifier,
    distill_surrogate,
    f_score,
    predict,
    predict_proba,
    train_mlp,
    train_random_forest,
)
from .encoding import (
    DataSchema,
    Query,
    decode_matrix,
    encode_frame,
    encode_instance,
    fit_gmm,
    fit_schema,
    make_query,
    preprocess,
)
from .eval_harness import (
    avg_euclid_distance,
    conditional_histogram,
    latency_profile,
    log_frequency_queries,
    model_compatibility,
    validity_rate,
)
from .synthesizer import (
    CounterfactualSet,
    PlainQuerySource,
    TrainConfig,
    TrainedSynthesizer,
    UmbrellaQuerySource,
    ZeroQuerySource,
    counterfactual_loss,
    generate,
    generate_unconditional,
    load,
    save,
    train,
)
from .umbrella import (
    MaskPolicy,
    UmbrellaPlan,
    build_plan,
    draw_training_queries,
    ensemble_sample,
    gelman_rubin,
    overlap_matrix,
    relax_instance,
    solve_weights,
)

__version__ = "0.1.0"

__all__ = [
    "CausalGraph", "Classifier", "CounterfactualSet", "DataSchema",
    "MaskPolicy", "ModularGenerator", "PlainQuerySource", "Query",
    "TrainConfig", "TrainedSynthesizer", "UmbrellaPlan",
    "UmbrellaQuerySource", "ZeroQuerySource", "anm_fitness",
    "avg_euclid_distance", "build_plan", "causation_score", "cds_fitness",
    "conditional_histogram", "counterfactual_loss", "decode_matrix",
    "distill_surrogate", "draw_training_queries", "encode_frame",
    "encode_instance", "ensemble_sample", "f_score", "fit_gmm",
    "fit_schema", "gelman_rubin", "generate", "generate_unconditional",
    "hsic", "latency_profile", "load", "log_frequency_queries",
    "make_query", "model_compatibility", "overlap_matrix", "predict",
    "predict_proba", "preprocess", "relax_instance", "save",
    "solve_weights", "train", "train_mlp", "train_random_forest",
    "validate_dag", "validity_rate",
]
