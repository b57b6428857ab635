from ninja import Router
from django.http import HttpResponse
from typing import List

from apps.runtime.builtins import list_builtins
from apps.runtime.functions import ASYNC, SYNC, FunctionSpec
from .node import get_node
from .schemas import BuiltinSchema, DeploySchema, DeploymentResultSchema, FunctionSchema

router = Router()
functions_router = Router()


@router.get("/health")
def health(request):
    """Liveness probe; never waits on the invocation queues"""
    return HttpResponse("ok", content_type="text/plain")


@router.get("/builtins", response=List[BuiltinSchema])
def builtins(request):
    """List the built-in handler catalog"""
    return list_builtins()


@functions_router.get("", response=List[FunctionSchema])
def list_functions(request):
    """List functions deployed on this node"""
    return [spec.to_dict() for spec in get_node().runtime.list_functions()]


@functions_router.put("/{name}", response=DeploymentResultSchema)
def deploy_function(request, name: str, payload: DeploySchema):
    """Deploy a function and bind it to its keygroup"""
    spec = FunctionSpec(
        name=name,
        handler=payload.handler,
        threads=payload.threads,
        keygroup=payload.keygroup or '',
        env=payload.env,
        replicate_from_existing=payload.replicate_from_existing,
    )
    return get_node().runtime.deploy(spec).to_dict()


@functions_router.post("/{name}")
def invoke_function(request, name: str):
    """Invoke synchronously; the request body is the input and the response body the output"""
    output = get_node().runtime.invoke(name, request.body, mode=SYNC)
    return HttpResponse(output, content_type="application/octet-stream")


@functions_router.post("/{name}/async")
def invoke_function_async(request, name: str):
    """Queue an invocation and return at once"""
    token = get_node().runtime.invoke(name, request.body, mode=ASYNC)
    response = HttpResponse(status=202)
    response['X-Invocation-Token'] = token
    return response
