"""From-scratch differentiable micro-network and its training mechanism."""
