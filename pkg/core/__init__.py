# Core identifiers, version vectors, clock and errors
