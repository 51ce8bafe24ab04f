"""API routes and controllers."""

