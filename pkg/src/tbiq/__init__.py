"""Task-based image quality assessment of super-resolution networks."""
