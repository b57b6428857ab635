"""
URL configuration for the node's public API.

Everything is served by one NinjaAPI mounted at the root, so the routes are
``/health``, ``/builtins`` and ``/functions/...``.
"""
from django.urls import path
from ninja import NinjaAPI
from ninja.errors import ValidationError

from apps.noded.api import functions_router, router as node_router
from core.exceptions import EnokiError

api = NinjaAPI(title="Enoki Node API", version="1.0.0")

ERROR_STATUS = {
    'NotFound': 404,
    'AlreadyExists': 409,
    'Conflict': 409,
    'BadRequest': 400,
    'Unavailable': 503,
    'Timeout': 504,
    'Internal': 500,
}


@api.exception_handler(EnokiError)
def enoki_error(request, exc):
    return api.create_response(
        request,
        {'kind': exc.kind, 'detail': exc.detail},
        status=ERROR_STATUS.get(exc.kind, 500),
    )


@api.exception_handler(ValidationError)
def validation_error(request, exc):
    return api.create_response(
        request,
        {'kind': 'BadRequest', 'detail': str(exc.errors)},
        status=400,
    )


# Add routers
api.add_router("", node_router)
api.add_router("/functions", functions_router)

urlpatterns = [
    path('', api.urls),
]
