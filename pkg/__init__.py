from .syntheticRatings import *
from .ingestRatings import *
from .reduceMatrix import *
from .expandMatrix import *
from .expansionStats import *
from .sampleRatings import *
from .verifyExpansion import *




VERSION = "0.1.0"
GIT_URL = "https://github.com/yang0/autotask_fractal"
NAME = "Fractal Rating Expansion"
DESCRIPTION = "Plugin that grows rating matrices by Kronecker fractal expansion while keeping their statistics"

TAGS = ["Recommender Systems", "Data Generation"]
