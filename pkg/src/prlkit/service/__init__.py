from . import schemas
from .app import app, create_app

__all__ = ["app", "create_app", "schemas"]
