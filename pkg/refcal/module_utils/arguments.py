"""Build command-line parsers from the DOCUMENTATION block of each command.

An option named ``n_max`` becomes the flag ``--n-max`` and is returned under
its documented name. Parsing errors raise UsageError instead of exiting.
"""

import argparse
from typing import Any, Callable, Dict, List, Optional, Sequence

import yaml

from refcal.module_utils.errors import UsageError

OPTION_TYPES: Dict[str, Callable[[str], Any]] = {"str": str, "path": str, "int": int, "float": float}


class CommandArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> Any:
        raise UsageError("{0}: {1}".format(self.prog, message))


def load_documentation(documentation: str) -> Dict[str, Any]:
    document = yaml.safe_load(documentation)
    if not isinstance(document, dict) or "command" not in document:
        raise ValueError("DOCUMENTATION must be a mapping with a 'command' key.")
    return document


def flag_for(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser(documentation: str) -> CommandArgumentParser:
    document = load_documentation(documentation)
    parser = CommandArgumentParser(
        prog="refcal {0}".format(document["command"]),
        description=document.get("short_description"),
    )
    for name, option in (document.get("options") or {}).items():
        option_type = option.get("type", "str")
        help_text = " ".join(option.get("description", []))
        flags = [flag_for(name)] + [flag_for(alias) for alias in option.get("aliases", [])]
        if option_type == "bool":
            parser.add_argument(
                *flags, dest=name, action="store_true", default=bool(option.get("default", False)), help=help_text
            )
            continue
        if option_type not in OPTION_TYPES:
            raise ValueError("Unsupported option type '{0}' for {1}.".format(option_type, name))
        parser.add_argument(
            *flags,
            dest=name,
            type=OPTION_TYPES[option_type],
            default=option.get("default"),
            choices=option.get("choices"),
            required=bool(option.get("required", False)),
            help=help_text,
        )
    return parser


def parse_arguments(documentation: str, argv: Optional[Sequence[str]]) -> Dict[str, Any]:
    arguments: Optional[List[str]] = None if argv is None else list(argv)
    return vars(build_parser(documentation).parse_args(arguments))
