"""Reference model server for the hiprompt wire protocol."""

from .app import create_app
from .config import ServerConfig

__version__ = "0.1.0"
