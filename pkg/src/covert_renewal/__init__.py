"""Covert communication by packet insertion and timing over renewal traffic."""
