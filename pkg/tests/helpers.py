from copynext.checks import finite_difference_check, random_params, relative_error

__all__ = ["finite_difference_check", "random_params", "relative_error"]
