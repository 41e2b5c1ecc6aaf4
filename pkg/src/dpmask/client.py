"""Clients the CLI talks through: in-process or over HTTP.

Both take a request model and return the validated response model, so the
CLI output does not depend on which backend served it.
"""

from __future__ import annotations

from pydantic import BaseModel

from dpmask.service.handlers import HANDLERS


class ServiceError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class LocalClient:
    def call(self, endpoint: str, request: BaseModel) -> BaseModel:
        fn, _, _ = HANDLERS[endpoint]
        return fn(request)


class HttpClient:
    def __init__(self, base_url: str, timeout: float | None = None):
        import httpx

        self._http = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def call(self, endpoint: str, request: BaseModel) -> BaseModel:
        import httpx

        _, _, response_model = HANDLERS[endpoint]
        try:
            resp = self._http.post("/" + endpoint, json=request.model_dump(mode="json"))
        except httpx.HTTPError as err:
            raise ServiceError(f"request to /{endpoint} failed: {err}") from err
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(f"/{endpoint} returned {resp.status_code}: {detail}", resp.status_code)
        return response_model.model_validate(resp.json())

    def close(self):
        self._http.close()


def make_client(server: str | None):
    return HttpClient(server) if server else LocalClient()
