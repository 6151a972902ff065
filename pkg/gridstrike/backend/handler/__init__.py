"""gridstrike sweep handlers"""
# pylint: skip-file

from .handler import *
from .sweep_handler import *
