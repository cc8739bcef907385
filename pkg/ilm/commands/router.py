import argparse
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

Argument = Tuple[Sequence[str], dict]


@dataclass
class Command:
    name: str
    handler: Callable[[argparse.Namespace], int]
    help: str
    arguments: List[Argument] = field(default_factory=list)
    needs_config: bool = True


class CommandRouter:
    """
    Collects CLI commands the way an API router collects endpoints: each
    command module owns a router, and the package router includes them all.
    """

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, arguments: Optional[List[Argument]] = None,
                needs_config: bool = True):
        def register(handler: Callable[[argparse.Namespace], int]):
            if name in self.commands:
                raise ValueError(f"command '{name}' registered twice")
            self.commands[name] = Command(name, handler, help, list(arguments or []), needs_config)
            return handler
        return register

    def include_router(self, other: "CommandRouter") -> None:
        for name, command in other.commands.items():
            if name in self.commands:
                raise ValueError(f"command '{name}' registered twice")
            self.commands[name] = command

    def add_subparsers(self, parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
        subparsers = parser.add_subparsers(dest="command", metavar="<command>", required=True)
        for name in sorted(self.commands):
            command = self.commands[name]
            parents = [common] if command.needs_config else []
            sub = subparsers.add_parser(name, help=command.help, description=command.help, parents=parents)
            for flags, options in command.arguments:
                sub.add_argument(*flags, **options)
            sub.set_defaults(handler=command.handler, needs_config=command.needs_config)


def argument(*flags: str, **options) -> Argument:
    return flags, options


ADAPTER_ARGUMENT = argument("--adapter", choices=["qformer", "qformer-rand", "mlp", "none"], default=None,
                            help="adapter kind (default: phase2.adapter from the config)")
