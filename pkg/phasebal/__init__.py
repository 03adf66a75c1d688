from .exception import *
from .phase import *
from .feeder import *
from .powerflow import *
from .metrics import *
from .sensitivity import *
from .balancer import *
