"""Two-stage tabular data synthesis with distribution alignment.

Stage 1 prompts an LLM with cluster-sampled exemplars to draft synthetic
rows; stage 2 reweights and resamples those rows so that feature-group
frequencies and discriminant probabilities match the original data.
"""

from .align import (
    FrequencyModel,
    WeightedTable,
    fit_frequencies,
    importance_weights,
    joint_probability,
    resample,
)
from .attribution import (
    BaselineSet,
    FeatureGroups,
    InteractionMap,
    aggregate_map,
    expected_gradients,
    extract_groups,
    interaction_map,
    merge_pairs,
)
from .config import PipelineConfig, load_config, save_config
from .data import (
    ColumnSpec,
    SplitSpec,
    Table,
    TableSchema,
    encode_row,
    encode_table,
    fit_bins,
    load_csv,
    split,
    write_csv,
)
from .errors import ConfigError, DataError, GenerationError, StageError, TabalignError, TransportError
from .evaluate import (
    SimilarityReport,
    UtilityReport,
    augmentation_utility,
    binary_metrics,
    mle_utility,
    multiclass_metrics,
    sdv_similarity,
)
from .exemplar import ExemplarSet, cluster, draw_exemplars
from .llmgen import (
    GenerationConfig,
    GenerationReport,
    Instruction,
    MockBias,
    build_prompt,
    call_llm,
    generate_stage1,
    parse_rows,
    refine_instruction,
    select_instruction,
)
from .predictor import PredictorSpec, TrainedPredictor, train

__version__ = "0.1.0"
