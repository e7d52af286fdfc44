# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Command-line support for graformer."""

import optparse     # pylint: disable=deprecated-module
import os.path
import platform
import sys
import textwrap

import numpy as np

import graformer
from graformer.config import PRESETS, read_run_config
from graformer.data import Camera, generate_synthetic, load_dataset, save_dataset, split_dataset
from graformer.debug import info_formatter, info_header, make_debug, write_formatted_info
from graformer.exceptions import BaseGraformerException, NumericalFailure
from graformer.graphops import SKELETON_PRESETS
from graformer.layers import VARIANTS, GraFormerModel, load_checkpoint
from graformer.report import render_report
from graformer.summary import EvalReporter, ParameterReporter
from graformer.tomlconfig import tomli
from graformer.training import SCHEDULES, evaluate, train
from graformer.viz import export_viz


class Opts:
    """A namespace class for individual options we'll build parsers from."""

    batch_size = optparse.make_option(
        '', '--batch-size', action='store', metavar="N", type="int",
        help="Samples per optimizer step.",
    )
    cheb_order = optparse.make_option(
        '-K', '--cheb-order', action='store', metavar="K", type="int",
        help="Chebyshev polynomial order of the graph convolutions.",
    )
    checkpoint = optparse.make_option(
        '', '--checkpoint', action='store', metavar="FILE",
        help="A model checkpoint (.grfk) to read.",
    )
    config = optparse.make_option(
        '', '--config', action='store', metavar="FILE",
        help=(
            "Specify configuration file. "
            "By default 'graformer.ini', 'setup.cfg', 'tox.ini', and "
            "'pyproject.toml' are tried. [env: GRFK_CONFIG]"
        ),
    )
    count = optparse.make_option(
        '-n', '--count', action='store', metavar="N", type="int",
        help="Number of samples to generate.",
    )
    data = optparse.make_option(
        '', '--data', action='store', metavar="FILE",
        help="The dataset file (.grfd) to read.",
    )
    debug = optparse.make_option(
        '', '--debug', action='store', metavar="OPTS",
        help="Debug options, separated by commas. [env: GRFK_DEBUG]",
    )
    depth = optparse.make_option(
        '', '--depth', action='store', metavar="MM", type="float",
        help="Distance from the camera to the synthetic subjects, in mm.",
    )
    dim = optparse.make_option(
        '', '--dim', action='store', metavar="D", type="int",
        help="Feature width of the model.",
    )
    dropout = optparse.make_option(
        '', '--dropout', action='store', metavar="RATE", type="float",
        help="Dropout rate on the residual branches.",
    )
    epochs = optparse.make_option(
        '', '--epochs', action='store', metavar="N", type="int",
        help="Number of passes over the training set.",
    )
    eval_data = optparse.make_option(
        '', '--eval-data', action='store', metavar="FILE",
        help="A held-out dataset to evaluate on after each epoch.",
    )
    eval_fraction = optparse.make_option(
        '', '--eval-fraction', action='store', metavar="F", type="float",
        help="Hold out this fraction of --data for evaluation when --eval-data isn't given.",
    )
    focal = optparse.make_option(
        '', '--focal', action='store', metavar="PX", type="float",
        help="Focal length of the synthetic camera, in pixels.",
    )
    heads = optparse.make_option(
        '', '--heads', action='store', metavar="H", type="int",
        help="Number of attention heads.",
    )
    help = optparse.make_option(
        '-h', '--help', action='store_true',
        help="Get help on this command.",
    )
    identity_check = optparse.make_option(
        '', '--identity-check', action='store_true',
        help="Use the targets as predictions, to check the metric itself.",
    )
    layers = optparse.make_option(
        '-N', '--layers', action='store', metavar="N", type="int",
        help="Number of stacked blocks.",
    )
    lr = optparse.make_option(
        '', '--lr', action='store', metavar="LR", type="float",
        help="Initial learning rate.",
    )
    out = optparse.make_option(
        '-o', '--out', action='store', metavar="PATH",
        help="Where to write the output: a file or a directory, depending on the command.",
    )
    pgm_ascii = optparse.make_option(
        '', '--ascii', action='store_true',
        help="Write plain (P2) PGM images instead of binary (P5) ones.",
    )
    preset = optparse.make_option(
        '', '--preset', action='store', metavar="NAME",
        choices=sorted(PRESETS),
        help="Start from a built-in model preset: {}.".format(", ".join(sorted(PRESETS))),
    )
    schedule = optparse.make_option(
        '', '--schedule', action='store', metavar="KIND",
        choices=list(SCHEDULES),
        help="Learning-rate decay: 'step' (every 75000 steps) or 'epoch' (every 30 epochs).",
    )
    seed = optparse.make_option(
        '', '--seed', action='store', metavar="N", type="int",
        help="Seed for every random choice the command makes.",
    )
    skeleton = optparse.make_option(
        '', '--skeleton', action='store', metavar="NAME",
        help="Built-in skeleton: {}.".format(", ".join(sorted(SKELETON_PRESETS))),
    )
    skeleton_file = optparse.make_option(
        '', '--skeleton-file', action='store', metavar="FILE",
        help="Read the skeleton from a text file instead.",
    )
    threads = optparse.make_option(
        '', '--threads', action='store', metavar="N", type="int",
        help="Worker threads for batch prefetch. [env: GRFK_THREADS]",
    )
    variant = optparse.make_option(
        '', '--variant', action='store', metavar="NAME",
        choices=list(VARIANTS),
        help="Model variant: {}.".format(", ".join(VARIANTS)),
    )
    version = optparse.make_option(
        '', '--version', action='store_true',
        help="Display version information and exit.",
    )


class GraformerOptionParser(optparse.OptionParser):
    """Base OptionParser for graformer.

    Problems don't exit the program.
    Defaults are initialized for all options.

    """

    def __init__(self, *args, **kwargs):
        super().__init__(
            add_help_option=False, *args, **kwargs
            )
        self.set_defaults(
            action=None,
            ascii=None,
            batch_size=None,
            cheb_order=None,
            checkpoint=None,
            config=True,
            count=None,
            data=None,
            debug=None,
            depth=None,
            dim=None,
            dropout=None,
            epochs=None,
            eval_data=None,
            eval_fraction=None,
            focal=None,
            heads=None,
            help=None,
            identity_check=None,
            layers=None,
            lr=None,
            out=None,
            preset=None,
            schedule=None,
            seed=None,
            skeleton=None,
            skeleton_file=None,
            threads=None,
            variant=None,
            version=None,
            )

        self.disable_interspersed_args()

    class OptionParserError(Exception):
        """Used to stop the optparse error handler ending the process."""
        pass

    def parse_args_ok(self, args=None, options=None):
        """Call optparse.parse_args, but return a triple:

        (ok, options, args)

        """
        try:
            options, args = super().parse_args(args, options)
        except self.OptionParserError:
            return False, None, None
        return True, options, args

    def error(self, msg):
        """Override optparse.error so sys.exit doesn't get called."""
        show_help(msg)
        raise self.OptionParserError


class GlobalOptionParser(GraformerOptionParser):
    """Command-line parser for graformer global option arguments."""

    def __init__(self):
        super().__init__()

        self.add_options([
            Opts.help,
            Opts.version,
        ])


class CmdOptionParser(GraformerOptionParser):
    """Parse one of the commands for graformer."""

    def __init__(self, action, options, defaults=None, usage=None, description=None):
        """Create an OptionParser for a graformer command.

        `action` is the slug to put into `options.action`.
        `options` is a list of Option's for the command.
        `defaults` is a dict of default value for options.
        `usage` is the usage string to display in help.
        `description` is the description of the command, for the help text.

        """
        if usage:
            usage = "%prog " + usage
        super().__init__(
            usage=usage,
            description=description,
        )
        self.set_defaults(action=action, **(defaults or {}))
        self.add_options(options)
        self.cmd = action

    def __eq__(self, other):
        # A convenience equality, so that I can put strings in unit test
        # results, and they will compare equal to objects.
        return (other == f"<CmdOptionParser:{self.cmd}>")

    __hash__ = None     # This object doesn't need to be hashed.

    def get_prog_name(self):
        """Override of an undocumented function in optparse.OptionParser."""
        program_name = super().get_prog_name()

        # Include the sub-command for this parser as part of the command.
        return f"{program_name} {self.cmd}"


GLOBAL_ARGS = [
    Opts.config,
    Opts.debug,
    Opts.help,
    ]

# Every command takes these, whether or not it is stochastic.
SHARED_ARGS = [
    Opts.out,
    Opts.seed,
    ] + GLOBAL_ARGS

MODEL_ARGS = [
    Opts.cheb_order,
    Opts.dim,
    Opts.dropout,
    Opts.heads,
    Opts.layers,
    Opts.preset,
    Opts.skeleton,
    Opts.skeleton_file,
    Opts.variant,
    ]

CMDS = {
    'debug': CmdOptionParser(
        "debug", GLOBAL_ARGS,
        usage="<topic>",
        description=(
            "Display information about the internals of graformer, "
            "for diagnosing problems. "
            "Topics are: "
                "'config' to show the configuration; "
                "'sys' to show installation information."
        ),
    ),

    'eval': CmdOptionParser(
        "eval",
        [
            Opts.batch_size,
            Opts.checkpoint,
            Opts.data,
            Opts.identity_check,
            ] + MODEL_ARGS + SHARED_ARGS,
        usage="[options]",
        description=(
            "Report the root-aligned MPJPE of a checkpoint on a dataset, with a "
            "per-action breakdown when the samples carry actions. Without "
            "--checkpoint, a freshly initialized model is evaluated."
        ),
    ),

    'export-viz': CmdOptionParser(
        "export-viz",
        [
            Opts.checkpoint,
            Opts.pgm_ascii,
            ] + MODEL_ARGS + SHARED_ARGS,
        usage="[options]",
        description=(
            "Write the learned adjacency matrices, the skeleton's normalized "
            "adjacency, and the first Chebyshev terms of its rescaled Laplacian "
            "as CSV files and grayscale PGM heatmaps."
        ),
    ),

    'gen': CmdOptionParser(
        "gen",
        [
            Opts.count,
            Opts.depth,
            Opts.focal,
            Opts.skeleton,
            Opts.skeleton_file,
            ] + SHARED_ARGS,
        usage="[options]",
        description="Generate a synthetic dataset of projected articulated poses.",
    ),

    'help': CmdOptionParser(
        "help", GLOBAL_ARGS,
        usage="[command]",
        description="Describe how to use graformer",
    ),

    'inspect': CmdOptionParser(
        "inspect",
        [
            Opts.checkpoint,
            ] + MODEL_ARGS + SHARED_ARGS,
        usage="[options]",
        description="Report the trainable parameters of a model, per component.",
    ),

    'train': CmdOptionParser(
        "train",
        [
            Opts.batch_size,
            Opts.data,
            Opts.epochs,
            Opts.eval_data,
            Opts.eval_fraction,
            Opts.lr,
            Opts.schedule,
            Opts.threads,
            ] + MODEL_ARGS + SHARED_ARGS,
        usage="[options]",
        description=(
            "Train a model on a dataset. Writes final.grfk, best.grfk, "
            "train_log.jsonl and effective.ini into the output directory."
        ),
    ),
}


def show_help(error=None, topic=None, parser=None):
    """Display an error message, or the named topic."""
    assert error or topic or parser

    program_path = sys.argv[0]
    if program_path.endswith(os.path.sep + '__main__.py'):
        # The path is the main module of a package; get that path instead.
        program_path = os.path.dirname(program_path)
    program_name = os.path.basename(program_path)

    help_params = dict(graformer.__dict__)
    help_params['program_name'] = program_name

    if error:
        print(error, file=sys.stderr)
        print(f"Use '{program_name} help' for help.", file=sys.stderr)
    elif parser:
        print(parser.format_help().strip())
        print()
    else:
        help_msg = textwrap.dedent(HELP_TOPICS.get(topic, '')).strip()
        if help_msg:
            print(help_msg.format(**help_params))
        else:
            print(f"Don't know topic {topic!r}")
    print("Full documentation is at {__url__}".format(**help_params))


OK, USAGE_ERR, NUMERICAL_ERR = 0, 2, 3


def warn(msg):
    """Print a warning about the configuration."""
    print(f"Graformer warning: {msg}", file=sys.stderr)


class GraformerScript:
    """The command-line interface to graformer."""

    def __init__(self):
        self.global_option = False
        self.config = None
        self.debug = None

    def command_line(self, argv):
        """The bulk of the command line interface to graformer.

        `argv` is the argument list to process.

        Returns 0 if all is well, 2 for usage or configuration problems.

        """
        # Collect the command-line options.
        if not argv:
            show_help(topic='minimum_help')
            return OK

        # The command syntax we parse depends on the first argument.  Global
        # switch syntax always starts with an option.
        self.global_option = argv[0].startswith('-')
        if self.global_option:
            parser = GlobalOptionParser()
        else:
            parser = CMDS.get(argv[0])
            if not parser:
                show_help(f"Unknown command: {argv[0]!r}")
                return USAGE_ERR
            argv = argv[1:]

        ok, options, args = parser.parse_args_ok(argv)
        if not ok:
            return USAGE_ERR

        # Handle help and version.
        if self.do_help(options, args, parser):
            return OK

        if args and options.action != "debug":
            show_help(f"Unexpected arguments: {' '.join(args)}")
            return USAGE_ERR

        self.config = read_run_config(
            options.config, warn,
            preset=options.preset,
            skeleton=options.skeleton,
            skeleton_file=options.skeleton_file,
            variant=options.variant,
            layers=options.layers,
            dim=options.dim,
            heads=options.heads,
            cheb_order=options.cheb_order,
            dropout=options.dropout,
            learning_rate=options.lr,
            batch_size=options.batch_size,
            epochs=options.epochs,
            schedule=options.schedule,
            seed=options.seed,
            threads=options.threads,
            eval_fraction=options.eval_fraction,
            data_file=options.data,
            eval_data_file=options.eval_data,
            checkpoint=options.checkpoint,
            debug=unshell_list(options.debug),
            )
        self.debug = make_debug(self.config.debug)
        if self.debug.should("config"):
            write_formatted_info(self.debug, "config", self.config_info())

        if options.action == "debug":
            return self.do_debug(args)
        elif options.action == "gen":
            return self.do_gen(options)
        elif options.action == "train":
            return self.do_train(options)
        elif options.action == "eval":
            return self.do_eval(options)
        elif options.action == "inspect":
            return self.do_inspect(options)
        elif options.action == "export-viz":
            return self.do_export_viz(options)

        return OK

    def do_help(self, options, args, parser):
        """Deal with help requests.

        Return True if it handled the request, False if not.

        """
        # Handle help.
        if options.help:
            if self.global_option:
                show_help(topic='help')
            else:
                show_help(parser=parser)
            return True

        if options.action == "help":
            if args:
                for a in args:
                    parser = CMDS.get(a)
                    if parser:
                        show_help(parser=parser)
                    else:
                        show_help(topic=a)
            else:
                show_help(topic='help')
            return True

        # Handle version.
        if options.version:
            show_help(topic='version')
            return True

        return False

    def config_info(self):
        """(label, value) pairs for every configuration setting."""
        return [(f"{section}:{option}", value) for section, option, value in self.config.effective_items()]

    def model_from_options(self):
        """The checkpointed model, or a fresh one from the configuration."""
        if self.config.checkpoint:
            return load_checkpoint(self.config.checkpoint)
        return GraFormerModel(self.config.model_config(), seed=self.config.seed)

    def do_gen(self, options):
        """Implementation of 'graformer gen'."""
        if options.count is None:
            show_help("Need --count, the number of samples to generate.")
            return USAGE_ERR
        if options.count < 1:
            show_help(f"--count must be at least 1, got {options.count}")
            return USAGE_ERR
        out = options.out or self.config.data_file or "synthetic.grfd"
        camera = Camera(
            focal=options.focal if options.focal is not None else 1000.0,
            depth_mm=options.depth if options.depth is not None else 5000.0,
        )
        dataset = generate_synthetic(self.config.skeleton_graph(), options.count, self.config.seed, camera)
        save_dataset(dataset, out)
        if self.debug.should("data"):
            self.debug.write(f"data: generated {len(dataset)} samples, seed {self.config.seed}")
        print(f"Wrote {len(dataset)} samples to {out}")
        return OK

    def do_train(self, options):
        """Implementation of 'graformer train'."""
        config = self.config
        if options.out:
            config.output_dir = options.out
        if not config.data_file:
            show_help("Need --data, the dataset to train on.")
            return USAGE_ERR
        skeleton = config.skeleton_graph()
        dataset = load_dataset(config.data_file, skeleton)
        if config.eval_data_file:
            train_set, eval_set = dataset, load_dataset(config.eval_data_file, skeleton)
        else:
            train_set, eval_set = split_dataset(dataset, config.eval_fraction, config.seed)
        if self.debug.should("data"):
            self.debug.write(
                f"data: {len(train_set)} training samples, "
                f"{len(eval_set) if eval_set is not None else 'no'} held-out samples"
            )

        model_config = config.model_config(skeleton)
        train_config = config.train_config()
        model = GraFormerModel(model_config, seed=config.seed)
        config.write_effective(os.path.join(config.output_dir, "effective.ini"))

        epochs = train_config.epochs

        def progress(row):
            print(
                f"epoch {row['epoch']}/{epochs}: loss {row['train_loss']:.4f}, "
                f"eval MPJPE {row['eval_mpjpe_mm']:.2f} mm, lr {row['lr']:.6g}"
            )

        result = train(
            model, train_set, train_config, eval_dataset=eval_set,
            checkpoint_dir=config.output_dir, debug=self.debug, progress=progress,
        )
        if result.best_epoch:
            print(f"Best eval MPJPE {result.best_eval_mpjpe:.2f} mm at epoch {result.best_epoch}")
        print(f"Checkpoints written to {config.output_dir}")
        return OK

    def do_eval(self, options):
        """Implementation of 'graformer eval'."""
        if not self.config.data_file:
            show_help("Need --data, the dataset to evaluate on.")
            return USAGE_ERR
        if options.identity_check and not self.config.checkpoint:
            model = None
            skeleton = self.config.skeleton_graph()
        else:
            if not self.config.checkpoint:
                print("No checkpoint given: evaluating a freshly initialized model")
            model = self.model_from_options()
            skeleton = model.skeleton
        dataset = load_dataset(self.config.data_file, skeleton)
        result = evaluate(
            model, dataset, batch_size=max(self.config.batch_size, 1),
            identity_check=bool(options.identity_check),
        )
        render_report(options.out, EvalReporter(result))
        return OK

    def do_inspect(self, options):
        """Implementation of 'graformer inspect'."""
        model = self.model_from_options()
        render_report(options.out, ParameterReporter(model))
        return OK

    def do_export_viz(self, options):
        """Implementation of 'graformer export-viz'."""
        model = self.model_from_options()
        out_dir = options.out or os.path.join(self.config.output_dir, "viz")
        names = export_viz(model, out_dir, binary=not options.ascii)
        print(f"Wrote {len(names)} matrices as CSV and PGM to {out_dir}")
        return OK

    def do_debug(self, args):
        """Implementation of 'graformer debug'."""

        if not args:
            show_help("What information would you like: config, sys?")
            return USAGE_ERR

        for info in args:
            if info == 'sys':
                print(info_header("sys"))
                for line in info_formatter(self.sys_info()):
                    print(f" {line}")
            elif info == 'config':
                print(info_header("config"))
                for line in info_formatter(self.config_info()):
                    print(f" {line}")
            else:
                show_help(f"Don't know what you mean by {info!r}")
                return USAGE_ERR

        return OK

    def sys_info(self):
        """(label, value) pairs describing the installation."""
        return [
            ("graformer_version", graformer.__version__),
            ("graformer_module", os.path.dirname(graformer.__file__)),
            ("numpy_version", np.__version__),
            ("toml_support", tomli is not None),
            ("python", sys.version.replace("\n", "")),
            ("platform", platform.platform()),
            ("cwd", os.getcwd()),
            ("config_files_attempted", self.config.attempted_config_files),
            ("config_files_read", self.config.config_files_read),
            ("GRFK_THREADS", os.environ.get("GRFK_THREADS", "-none-")),
        ]


def unshell_list(s):
    """Turn a command-line argument into a list."""
    if not s:
        return None
    return s.split(',')


HELP_TOPICS = {
    'help': """\
        graformer, version {__version__}
        GraFormer 2D-to-3D pose lifting: generate data, train, evaluate, inspect.

        usage: {program_name} <command> [options] [args]

        Commands:
            debug       Display information about the internals of graformer.
            eval        Report MPJPE of a checkpoint on a dataset.
            export-viz  Export adjacency and Laplacian matrices as CSV and PGM.
            gen         Generate a synthetic dataset.
            help        Get help on using graformer.
            inspect     Report trainable parameters per component.
            train       Train a model on a dataset.

        Use "{program_name} help <command>" for detailed help on any command.
    """,

    'minimum_help': """\
        GraFormer pose lifting, version {__version__}.  Use '{program_name} help' for help.
    """,

    'version': """\
        graformer, version {__version__}
    """,
}


def main(argv=None):
    """The main entry point to graformer.

    This is installed as the script entry point.

    """
    if argv is None:
        argv = sys.argv[1:]
    try:
        status = GraformerScript().command_line(argv)
    except NumericalFailure as err:
        print(err.args[0], file=sys.stderr)
        status = NUMERICAL_ERR
    except BaseGraformerException as err:
        # A controlled error inside graformer: print the message to the user.
        print(err.args[0], file=sys.stderr)
        status = USAGE_ERR
    except OSError as err:
        print(err, file=sys.stderr)
        status = USAGE_ERR
    except SystemExit as err:
        # The user called `sys.exit()`.  Exit with their argument, if any.
        if err.args:
            status = err.args[0]
        else:
            status = None
    return status
