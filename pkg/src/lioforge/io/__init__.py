"""File formats, dataset layout and configuration loading."""
