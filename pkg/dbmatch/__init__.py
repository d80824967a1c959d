"""
dbmatch
=======

Simulation of matching correlated databases: generate pairs of databases
whose entries for the same member are jointly distributed, reconstruct the
labeling of the second from the first, and sweep how success depends on the
rate ``log2(n) / m`` against the mutual information rate of the entry
process.

"""
__version__ = '0.1.0'

from dbmatch.errors import (DBMatchError, ValidationError, ResourceCapError,
                            OracleCapError, StationarityError,
                            ReducibleChainError, UsageError,
                            SweepRangeError, PairFormatError,
                            VersionMismatchError, TruncatedFileError,
                            ChecksumError, ReportError)
from dbmatch.process import (EntropyReport, JointProcessSpec, IIDDiscrete,
                             IIDGaussian, MarkovDiscrete, sample_pair,
                             log_joint_density, log_marginal_density,
                             pairwise_log_joint, entropy_rates,
                             estimate_entropy_rates, marginal_entropy_rates,
                             stationary_block_distribution, load_spec,
                             save_spec, builtin_specs)
from dbmatch.database import (UnlabeledDatabase, LabeledDatabase,
                              CorrelatedPair, AttackView,
                              generate_correlated_pair, save_pair, load_pair,
                              load_attack_view, export_csv)
from dbmatch.matcher import (MatchResult, is_jointly_typical,
                             typicality_match, map_match, random_match,
                             success_fraction)
from dbmatch.harness import (SweepConfig, SweepTable, ThresholdEstimate,
                             load_config, run_sweep, estimate_threshold,
                             emit_report, emit_gnuplot)
