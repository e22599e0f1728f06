"""Genetic search over feed-forward collaborative-filtering networks."""

from pathlib import Path

from .genome import BlockGene, Genome, GenomeRanges, InitScheme, random_genome, validate
from .operators import OperatorConfig, ScoredIndividual
from .network import Network, TrainConfig, decode, fit_proxy, forward
from .evaldata import InteractionDataset, evaluate_model, leave_one_out_split, load_interactions
from .evolution import EvolutionConfig, evolve, final_train

TOY_DATASET = Path(__file__).parent / "data" / "toy.tsv"

__all__ = [
    "BlockGene", "Genome", "GenomeRanges", "InitScheme", "random_genome", "validate",
    "OperatorConfig", "ScoredIndividual",
    "Network", "TrainConfig", "decode", "fit_proxy", "forward",
    "InteractionDataset", "evaluate_model", "leave_one_out_split", "load_interactions",
    "EvolutionConfig", "evolve", "final_train",
    "TOY_DATASET",
]
