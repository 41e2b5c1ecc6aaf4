"""HTTP service exposing the dpmask operations (FastAPI + pydantic)."""
