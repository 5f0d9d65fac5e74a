"""Recorded-fixture editor service for offline tests.

The server replays stored responses keyed by the request digest. Fixtures are
recorded once (from a real editor or hand-built from the mock) with
record_fixture. Unknown digests 404; digests listed in fail_digests return 500
to exercise retry/failure paths.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .editor import EditRequest
from .imaging import encode_png


def record_fixture(fixture_dir, req: EditRequest, image, editor_id: str = "fixture"):
    """Store the response that the fixture server should replay for req."""
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "image_b64": base64.b64encode(encode_png(image)).decode("ascii"),
        "editor_id": editor_id,
    }
    path = fixture_dir / f"{req.digest()}.json"
    path.write_text(json.dumps(payload))
    return path


def make_fixture_app(fixture_dir, fail_digests: set | None = None) -> FastAPI:
    fixture_dir = Path(fixture_dir)
    fail_digests = fail_digests or set()
    app = FastAPI(title="editor-fixtures")

    @app.post("/edit")
    def edit(body: dict):
        import hashlib

        digest = hashlib.sha256(
            json.dumps(body, sort_keys=True).encode()
        ).hexdigest()
        if digest in fail_digests:
            return JSONResponse({"error": "injected failure"}, status_code=500)
        path = fixture_dir / f"{digest}.json"
        if not path.exists():
            return JSONResponse(
                {"error": f"no fixture for digest {digest}"}, status_code=404
            )
        return json.loads(path.read_text())

    return app
