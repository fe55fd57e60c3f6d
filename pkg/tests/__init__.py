"""Test blockzoo package."""
