# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.

"""Wire contract between simulated clients and the server."""
