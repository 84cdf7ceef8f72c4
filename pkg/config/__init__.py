"""Django project package for the pruning toolkit."""
