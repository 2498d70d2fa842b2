from .config import Config as Config
from .config import RunConfig as RunConfig
from .errors import GplfmError as GplfmError
from .lfm import LatentForceModel as LatentForceModel
from .pipeline import Identifier as Identifier
from .pipeline import run_identify as run_identify
from .pipeline import run_predict as run_predict
from .pipeline import run_prior_sensitivity as run_prior_sensitivity
from .pipeline import run_silverbox as run_silverbox
from .pipeline import run_simulate as run_simulate
from .results import FittedModel as FittedModel
from .results import PosteriorSummary as PosteriorSummary
