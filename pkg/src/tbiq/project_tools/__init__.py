"""CLI-accessible helper scripts bundled with the project."""
