"""
Commands package - Register all command-line subcommands
"""
from .simulate_commands import register_simulate_commands
from .selector_commands import register_selector_commands
from .train_commands import register_train_commands
from .evaluate_commands import register_evaluate_commands


def register_commands(subparsers, app_config):
    """Register all subcommands on the top-level parser"""
    register_simulate_commands(subparsers, app_config)
    register_selector_commands(subparsers, app_config)
    register_train_commands(subparsers, app_config)
    register_evaluate_commands(subparsers, app_config)
