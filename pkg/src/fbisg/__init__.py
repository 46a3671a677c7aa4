"""Race imputation from names and geography: BISG and fully Bayesian BISG."""

__version__ = "0.1.0"

from .core import (J, RACES, DataError, EmptyGeographyError, FbisgError, PersonRecord,
                   RaceCategory, SamplerConfig, UnknownGeographyError, parse_race,
                   validate_probability_vector)
from .geo import GeoTable, load_geo_counts, p_race_given_geo, zero_count_summary
from .names import (DictionarySet, NameDictionary, build_dictionary, coverage_report,
                    load_census_surname_file, merge_dictionaries, normalize_name)
from .inference import (PosteriorPrediction, PredictionSet, bisg_posterior, bisg_predict,
                        gibbs_conditional, map_classify, run_fbisg)
from .evaluation import auroc, calibration_curve, error_table, evaluate
from .kernel import BACKEND

__all__ = [
    "BACKEND", "J", "RACES", "DataError", "DictionarySet", "EmptyGeographyError", "FbisgError",
    "GeoTable", "NameDictionary", "PersonRecord", "PosteriorPrediction", "PredictionSet",
    "RaceCategory", "SamplerConfig", "UnknownGeographyError", "auroc", "bisg_posterior",
    "bisg_predict", "build_dictionary", "calibration_curve", "coverage_report", "error_table",
    "evaluate", "gibbs_conditional", "load_census_surname_file", "load_geo_counts",
    "map_classify", "merge_dictionaries", "normalize_name", "p_race_given_geo", "parse_race",
    "run_fbisg", "validate_probability_vector", "zero_count_summary",
]
