# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Configuration for graformer runs."""

import collections
import configparser
import copy
import os
import os.path

from graformer.debug import debug_options_from_env
from graformer.exceptions import ConfigError
from graformer.misc import ensure_dir_for_file, substitute_variables
from graformer.tomlconfig import TomlConfigParser, TomlDecodeError


class HandyConfigParser(configparser.RawConfigParser):
    """Our specialization of ConfigParser."""

    def __init__(self, our_file):
        """Create the HandyConfigParser.

        `our_file` is True if this config file is specifically for graformer,
        False if we are examining another config file (tox.ini, setup.cfg)
        for possible settings.
        """

        configparser.RawConfigParser.__init__(self)
        self.section_prefixes = ["graformer:"]
        if our_file:
            self.section_prefixes.append("")

    def read(self, filenames, encoding_unused=None):
        """Read a file name as UTF-8 configuration data."""
        return configparser.RawConfigParser.read(self, filenames, encoding="utf-8")

    def has_option(self, section, option):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            has = configparser.RawConfigParser.has_option(self, real_section, option)
            if has:
                return has
        return False

    def has_section(self, section):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            has = configparser.RawConfigParser.has_section(self, real_section)
            if has:
                return real_section
        return False

    def options(self, section):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            if configparser.RawConfigParser.has_section(self, real_section):
                return configparser.RawConfigParser.options(self, real_section)
        raise configparser.NoSectionError(section)

    def get(self, section, option, *args, **kwargs):
        """Get a value, replacing environment variables also.

        The arguments are the same as `RawConfigParser.get`, but in the found
        value, ``$WORD`` or ``${WORD}`` are replaced by the value of the
        environment variable ``WORD``.

        Returns the finished value.

        """
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            if configparser.RawConfigParser.has_option(self, real_section, option):
                break
        else:
            raise configparser.NoOptionError(option, section)

        v = configparser.RawConfigParser.get(self, real_section, option, *args, **kwargs)
        v = substitute_variables(v, os.environ)
        return v

    def getlist(self, section, option):
        """Read a list of strings.

        The value of `section` and `option` is treated as a comma- and newline-
        separated list of strings.  Each value is stripped of whitespace.

        Returns the list of strings.

        """
        value_list = self.get(section, option)
        values = []
        for value_line in value_list.split('\n'):
            for value in value_line.split(','):
                value = value.strip()
                if value:
                    values.append(value)
        return values


# Built-in model presets. "default" is the full-size configuration, "small"
# the lightweight one.
PRESETS = {
    "default": dict(layers=5, dim=96, heads=4, cheb_order=2, dropout=0.25),
    "small": dict(layers=2, dim=64, heads=4, cheb_order=2, dropout=0.1),
}


class RunConfig:
    """graformer configuration.

    The attributes of this class are the various settings that control a
    run: the model shape, the training hyperparameters, and file paths.

    """
    # pylint: disable=too-many-instance-attributes

    def __init__(self):
        """Initialize the configuration attributes to their defaults."""
        # We tried to read these config files.
        self.attempted_config_files = []
        # We did read these config files, but maybe didn't find any content for us.
        self.config_files_read = []
        # The file that gave us our configuration.
        self.config_file = None
        # Attributes that a config file set, so a preset doesn't clobber them.
        self._file_attrs = set()

        # Defaults for [model]
        self.preset = "default"
        self.skeleton = "human16"
        self.variant = "graformer"
        self.gcn_hidden_ratio = 2
        self.apply_preset("default")

        # Defaults for [train]
        self.learning_rate = 0.001
        self.batch_size = 64
        self.epochs = 50
        self.schedule = "step"
        self.decay_rate = 0.9
        self.decay_steps = 75000
        self.decay_epochs = 30
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.adam_eps = 1e-8
        self.seed = 0
        self.threads = 0
        self.eval_fraction = 0.0

        # Defaults for [paths]
        self.skeleton_file = None
        self.data_file = None
        self.eval_data_file = None
        self.checkpoint = None
        self.output_dir = "graformer_out"

        # Defaults for [run]
        self.debug = []

    MUST_BE_LIST = ["debug"]

    def apply_preset(self, name):
        """Set the model attributes from the built-in preset `name`.

        Attributes that were read from a config file keep their values.

        """
        if name not in PRESETS:
            raise ConfigError(
                f"Unknown preset {name!r}, choose from: {', '.join(sorted(PRESETS))}"
            )
        self.preset = name
        for attr, value in PRESETS[name].items():
            if attr not in self._file_attrs:
                setattr(self, attr, value)

    def from_args(self, **kwargs):
        """Read config values from `kwargs`."""
        for k, v in kwargs.items():
            if v is not None:
                if k in self.MUST_BE_LIST and isinstance(v, str):
                    v = [v]
                setattr(self, k, v)

    def from_file(self, filename, warn, our_file):
        """Read configuration from a .ini or .toml file.

        `filename` is a file name to read.

        `our_file` is True if this config file is specifically for graformer,
        False if we are examining another config file (tox.ini, setup.cfg)
        for possible settings.

        Returns True or False, whether the file could be read, and it had some
        graformer settings in it.

        """
        _, ext = os.path.splitext(filename)
        if ext == '.toml':
            cp = TomlConfigParser(our_file)
        else:
            cp = HandyConfigParser(our_file)

        self.attempted_config_files.append(filename)

        try:
            files_read = cp.read(filename)
        except (configparser.Error, TomlDecodeError) as err:
            raise ConfigError(f"Couldn't read config file {filename}: {err}") from err
        if not files_read:
            return False

        self.config_files_read.extend(map(os.path.abspath, files_read))

        any_set = False
        try:
            for option_spec in self.CONFIG_FILE_OPTIONS:
                was_set = self._set_attr_from_config_option(cp, *option_spec)
                if was_set:
                    any_set = True
                    self._file_attrs.add(option_spec[0])
        except ValueError as err:
            raise ConfigError(f"Couldn't read config file {filename}: {err}") from err

        # Check that there are no unrecognized options.
        all_options = collections.defaultdict(set)
        for option_spec in self.CONFIG_FILE_OPTIONS:
            section, option = option_spec[1].split(":")
            all_options[section].add(option)

        for section, options in all_options.items():
            real_section = cp.has_section(section)
            if real_section:
                for unknown in set(cp.options(section)) - options:
                    warn(
                        "Unrecognized option '[{}] {}=' in config file {}".format(
                            real_section, unknown, filename
                        )
                    )

        # Was this file used as a config file? If it's specifically our file,
        # then it was used.  If we're piggybacking on someone else's file,
        # then it was only used if we found some settings in it.
        used = our_file or any_set
        if used:
            self.config_file = os.path.abspath(filename)
        return used

    def copy(self):
        """Return a copy of the configuration."""
        return copy.deepcopy(self)

    CONFIG_FILE_OPTIONS = [
        # These are *args for _set_attr_from_config_option:
        #   (attr, where, type_="")
        #
        #   attr is the attribute to set on the RunConfig object.
        #   where is the section:name to read from the configuration file.
        #   type_ is the optional type to apply, by using .getTYPE to read the
        #       configuration value from the file.

        # [model]
        ('preset', 'model:preset'),
        ('skeleton', 'model:skeleton'),
        ('variant', 'model:variant'),
        ('layers', 'model:layers', 'int'),
        ('dim', 'model:dim', 'int'),
        ('heads', 'model:heads', 'int'),
        ('cheb_order', 'model:cheb_order', 'int'),
        ('gcn_hidden_ratio', 'model:gcn_hidden_ratio', 'int'),
        ('dropout', 'model:dropout', 'float'),

        # [train]
        ('learning_rate', 'train:learning_rate', 'float'),
        ('batch_size', 'train:batch_size', 'int'),
        ('epochs', 'train:epochs', 'int'),
        ('schedule', 'train:schedule'),
        ('decay_rate', 'train:decay_rate', 'float'),
        ('decay_steps', 'train:decay_steps', 'int'),
        ('decay_epochs', 'train:decay_epochs', 'int'),
        ('beta1', 'train:beta1', 'float'),
        ('beta2', 'train:beta2', 'float'),
        ('adam_eps', 'train:adam_eps', 'float'),
        ('seed', 'train:seed', 'int'),
        ('threads', 'train:threads', 'int'),
        ('eval_fraction', 'train:eval_fraction', 'float'),

        # [paths]
        ('skeleton_file', 'paths:skeleton_file'),
        ('data_file', 'paths:data'),
        ('eval_data_file', 'paths:eval_data'),
        ('checkpoint', 'paths:checkpoint'),
        ('output_dir', 'paths:output_dir'),

        # [run]
        ('debug', 'run:debug', 'list'),
    ]

    def _set_attr_from_config_option(self, cp, attr, where, type_=''):
        """Set an attribute on self if it exists in the ConfigParser.

        Returns True if the attribute was set.

        """
        section, option = where.split(":")
        if cp.has_option(section, option):
            method = getattr(cp, 'get' + type_)
            setattr(self, attr, method(section, option))
            return True
        return False

    def set_option(self, option_name, value):
        """Set an option in the configuration.

        `option_name` is a colon-separated string indicating the section and
        option name.  For example, the ``dim`` option in the ``[model]``
        section of the config file would be indicated with `"model:dim"`.

        """
        for option_spec in self.CONFIG_FILE_OPTIONS:
            attr, where = option_spec[:2]
            if where == option_name:
                setattr(self, attr, value)
                return
        raise ConfigError(f"No such option: {option_name!r}")

    def get_option(self, option_name):
        """Get an option from the configuration.

        `option_name` is a colon-separated string indicating the section and
        option name, like `"train:learning_rate"`.

        Returns the value of the option.

        """
        for option_spec in self.CONFIG_FILE_OPTIONS:
            attr, where = option_spec[:2]
            if where == option_name:
                return getattr(self, attr)
        raise ConfigError(f"No such option: {option_name!r}")

    def post_process_file(self, path):
        """Make final adjustments to a file path to make it usable."""
        if path is None:
            return None
        return os.path.expanduser(path)

    def post_process(self):
        """Make final adjustments to settings to make them usable."""
        self.skeleton_file = self.post_process_file(self.skeleton_file)
        self.data_file = self.post_process_file(self.data_file)
        self.eval_data_file = self.post_process_file(self.eval_data_file)
        self.checkpoint = self.post_process_file(self.checkpoint)
        self.output_dir = self.post_process_file(self.output_dir)

    def skeleton_graph(self):
        """Build the SkeletonGraph this configuration names."""
        from graformer.graphops import load_skeleton, skeleton_preset
        if self.skeleton_file:
            return load_skeleton(self.skeleton_file)
        return skeleton_preset(self.skeleton)

    def model_config(self, skeleton=None):
        """Build and validate the ModelConfig for this run."""
        from graformer.layers import ModelConfig
        return ModelConfig(
            skeleton=skeleton if skeleton is not None else self.skeleton_graph(),
            layers=self.layers,
            dim=self.dim,
            heads=self.heads,
            cheb_order=self.cheb_order,
            gcn_hidden_ratio=self.gcn_hidden_ratio,
            dropout=self.dropout,
            variant=self.variant,
        )

    def train_config(self):
        """Build and validate the TrainConfig for this run."""
        from graformer.training import TrainConfig
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            dropout=self.dropout,
            epochs=self.epochs,
            schedule=self.schedule,
            decay_rate=self.decay_rate,
            decay_steps=self.decay_steps,
            decay_epochs=self.decay_epochs,
            seed=self.seed,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            threads=self.threads,
        )

    def effective_items(self):
        """Yield (section, option, value) for every file-settable option."""
        for option_spec in self.CONFIG_FILE_OPTIONS:
            attr, where = option_spec[:2]
            section, option = where.split(":")
            yield section, option, getattr(self, attr)

    def write_effective(self, path):
        """Write the effective configuration to `path` as an INI file.

        The output can be read back with ``--config``.

        """
        cp = configparser.RawConfigParser()
        for section, option, value in self.effective_items():
            if value is None:
                continue
            if not cp.has_section(section):
                cp.add_section(section)
            if isinstance(value, list):
                value = ", ".join(value)
            cp.set(section, option, str(value))
        ensure_dir_for_file(path)
        with open(path, "w", encoding="utf-8") as f:
            cp.write(f)


def config_files_to_try(config_file):
    """What config files should we try to read?

    Returns a list of tuples:
        (filename, is_our_file, was_file_specified)
    """
    specified_file = (config_file is not True)
    if not specified_file:
        # No file was specified. Check GRFK_CONFIG.
        config_file = os.environ.get('GRFK_CONFIG')
        if config_file:
            specified_file = True
    if not specified_file:
        # Still no file specified. Default to graformer.ini
        config_file = "graformer.ini"
    files_to_try = [
        (config_file, True, specified_file),
        ("setup.cfg", False, False),
        ("tox.ini", False, False),
        ("pyproject.toml", False, False),
    ]
    return files_to_try


def read_run_config(config_file, warn, preset=None, **kwargs):
    """Read the graformer configuration.

    Arguments:
        config_file: a file name to read, True to look in the usual places,
            or False to read no file.
        warn: a function to issue warnings.
        preset: the name of a built-in preset, or None to use the one the
            config file names (or "default").
        all others: keyword arguments from the command line, used for
            setting values in the configuration.

    Returns:
        config:
            config is a RunConfig object read from the appropriate
            configuration file.

    """
    # Build the configuration from a number of sources:
    # 1) defaults:
    config = RunConfig()

    # 2) from a file:
    if config_file:
        files_to_try = config_files_to_try(config_file)

        for fname, our_file, specified_file in files_to_try:
            config_read = config.from_file(fname, warn, our_file=our_file)
            if config_read:
                break
            if specified_file:
                raise ConfigError(f"Couldn't read {fname!r} as a config file")

    # 3) the preset fills in whatever the file didn't say:
    config.apply_preset(preset or config.preset)

    # 4) from environment variables:
    env_threads = os.environ.get('GRFK_THREADS')
    if env_threads:
        try:
            config.threads = int(env_threads)
        except ValueError as err:
            raise ConfigError(f"GRFK_THREADS must be an integer: {env_threads!r}") from err
    config.debug.extend(debug_options_from_env())

    # 5) from command-line arguments:
    config.from_args(**kwargs)

    config.post_process()

    return config
