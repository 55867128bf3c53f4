"""INI run configuration.

One file describes a complete run: [geometry], [layout], [train], [data]
and [output] sections. Every key is checked against the known set and
misspellings are hard errors with a suggestion, because a silently
ignored knob in a multi-minute optimization is expensive. Values accept
"auto" where a derived default exists.

Tasks are declared in [data] as task0_images/task0_labels,
task1_images/..., numbered contiguously from zero. The wavelength count
must either match the task count (one channel per task) or be exactly
one (all tasks amplitude-multiplexed onto a single channel).
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import dataclass, field
from pathlib import Path

from . import data as data_mod
from . import optics, readout, training

__all__ = ["ConfigError", "TaskFiles", "RunConfig"]


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


_KNOWN = {
    "geometry": {"side", "pitch", "pad_factor", "layers", "wavelengths", "spacing"},
    "layout": {"categories", "tasks", "region_size", "gap_min", "filter"},
    "train": {"epochs", "batch_size", "learning_rate", "lr_decay",
              "penalty_weight", "seed", "logit_scale", "phase_init",
              "fft_workers"},
    "data": None,   # validated separately (task-numbered keys)
    "output": {"dir", "save_pgm", "save_raw", "save_history"},
}

_DATA_SHARED = {"limit", "test_limit", "subset_seed"}
_DATA_TASK_SUFFIXES = {"images", "labels", "test_images", "test_labels",
                       "classes", "cap"}


@dataclass
class TaskFiles:
    """Dataset file paths and subsetting options for one task."""

    images: str
    labels: str
    test_images: str | None = None
    test_labels: str | None = None
    classes: list | None = None
    cap: int | None = None


def _suggest(word, options):
    close = difflib.get_close_matches(word, options, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _parse_float(section, key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a number") from None


def _parse_int(section, key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not an integer") from None


def _parse_bool(section, key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key} = {text!r} is not a boolean")


def _parse_float_list(section, key, text):
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a number list") from None


def _parse_int_list(section, key, text):
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not an integer list") from None


@dataclass
class RunConfig:
    """Validated run description; build_* methods yield live objects."""

    side: int = 100
    pitch: float = 4e-6
    pad_factor: int = 2
    layers: int = 3
    wavelengths: list = field(default_factory=lambda: [700e-9, 400e-9])
    spacing: list | None = None          # None: derive from shortest wavelength

    categories: int = 10
    tasks: int | None = None             # None: one per data task
    region_size: int | None = None
    gap_min: int | None = None
    filter_mode: readout.FilterMode = readout.FilterMode.BROADBAND

    train: training.TrainConfig = field(default_factory=training.TrainConfig)

    task_files: list = field(default_factory=list)
    limit: int | None = None
    test_limit: int | None = None
    subset_seed: int = 0

    out_dir: str = "runs"
    save_pgm: bool = True
    save_raw: bool = True
    save_history: bool = True

    # ---------- parsing ----------

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_string(path.read_text(), overrides=overrides)

    @classmethod
    def from_string(cls, text: str, overrides=()) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        for item in overrides:
            try:
                dotted, value = item.split("=", 1)
                section, key = dotted.strip().split(".", 1)
            except ValueError:
                raise ConfigError(
                    f"override {item!r} is not of the form section.key=value"
                ) from None
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key.strip(), value.strip())
        return cls._from_parser(parser)

    @classmethod
    def _from_parser(cls, parser) -> "RunConfig":
        cfg = cls()
        for section in parser.sections():
            if section not in _KNOWN:
                raise ConfigError(
                    f"unknown section [{section}]{_suggest(section, _KNOWN)}"
                )
        if parser.defaults():
            stray = ", ".join(parser.defaults())
            raise ConfigError(f"keys outside any section: {stray}")

        for section, known in _KNOWN.items():
            if known is None or not parser.has_section(section):
                continue
            for key in parser.options(section):
                if key not in known:
                    raise ConfigError(
                        f"unknown key {key!r} in [{section}]{_suggest(key, known)}"
                    )

        g = parser["geometry"] if parser.has_section("geometry") else {}
        if "side" in g:
            cfg.side = _parse_int("geometry", "side", g["side"])
        if "pitch" in g:
            cfg.pitch = _parse_float("geometry", "pitch", g["pitch"])
        if "pad_factor" in g:
            cfg.pad_factor = _parse_int("geometry", "pad_factor", g["pad_factor"])
        if "layers" in g:
            cfg.layers = _parse_int("geometry", "layers", g["layers"])
        if "wavelengths" in g:
            cfg.wavelengths = _parse_float_list("geometry", "wavelengths",
                                                g["wavelengths"])
        if "spacing" in g and g["spacing"].strip().lower() != "auto":
            cfg.spacing = _parse_float_list("geometry", "spacing", g["spacing"])

        l = parser["layout"] if parser.has_section("layout") else {}
        if "categories" in l:
            cfg.categories = _parse_int("layout", "categories", l["categories"])
        if "tasks" in l:
            cfg.tasks = _parse_int("layout", "tasks", l["tasks"])
        if "region_size" in l and l["region_size"].strip().lower() != "auto":
            cfg.region_size = _parse_int("layout", "region_size", l["region_size"])
        if "gap_min" in l and l["gap_min"].strip().lower() != "auto":
            cfg.gap_min = _parse_int("layout", "gap_min", l["gap_min"])
        if "filter" in l:
            try:
                cfg.filter_mode = readout.FilterMode.parse(l["filter"])
            except ValueError as exc:
                raise ConfigError(f"[layout] {exc}") from None

        t = parser["train"] if parser.has_section("train") else {}
        kwargs = {}
        if "epochs" in t:
            kwargs["epochs"] = _parse_int("train", "epochs", t["epochs"])
        if "batch_size" in t:
            kwargs["batch_size"] = _parse_int("train", "batch_size", t["batch_size"])
        if "learning_rate" in t:
            kwargs["learning_rate"] = _parse_float("train", "learning_rate",
                                                   t["learning_rate"])
        if "lr_decay" in t:
            kwargs["lr_decay"] = _parse_float("train", "lr_decay", t["lr_decay"])
        if "penalty_weight" in t:
            kwargs["penalty_weight"] = _parse_float("train", "penalty_weight",
                                                    t["penalty_weight"])
        if "seed" in t:
            kwargs["seed"] = _parse_int("train", "seed", t["seed"])
        if "logit_scale" in t and t["logit_scale"].strip().lower() != "auto":
            kwargs["logit_scale"] = _parse_float("train", "logit_scale",
                                                 t["logit_scale"])
        if "phase_init" in t:
            kwargs["phase_init"] = t["phase_init"].strip()
        if "fft_workers" in t:
            kwargs["fft_workers"] = _parse_int("train", "fft_workers",
                                               t["fft_workers"])
        try:
            cfg.train = training.TrainConfig(filter_mode=cfg.filter_mode, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

        if parser.has_section("data"):
            cfg._parse_data(parser["data"])

        o = parser["output"] if parser.has_section("output") else {}
        if "dir" in o:
            cfg.out_dir = o["dir"].strip()
        if "save_pgm" in o:
            cfg.save_pgm = _parse_bool("output", "save_pgm", o["save_pgm"])
        if "save_raw" in o:
            cfg.save_raw = _parse_bool("output", "save_raw", o["save_raw"])
        if "save_history" in o:
            cfg.save_history = _parse_bool("output", "save_history", o["save_history"])

        cfg._validate()
        return cfg

    def _parse_data(self, section):
        tasks = {}
        for key in section:
            if key in _DATA_SHARED:
                continue
            if "_" not in key:
                raise ConfigError(
                    f"unknown key {key!r} in [data]"
                    f"{_suggest(key, sorted(_DATA_SHARED))}"
                )
            head, _, suffix = key.partition("_")
            if not head.startswith("task") or not head[4:].isdigit() \
                    or suffix not in _DATA_TASK_SUFFIXES:
                options = [f"task0_{s}" for s in sorted(_DATA_TASK_SUFFIXES)]
                raise ConfigError(
                    f"unknown key {key!r} in [data]"
                    f"{_suggest(key, options + sorted(_DATA_SHARED))}"
                )
            tasks.setdefault(int(head[4:]), {})[suffix] = section[key]
        if tasks:
            expect = list(range(len(tasks)))
            if sorted(tasks) != expect:
                raise ConfigError(
                    f"[data] task numbers must be contiguous from 0, got {sorted(tasks)}"
                )
            for n in expect:
                spec = tasks[n]
                if "images" not in spec or "labels" not in spec:
                    raise ConfigError(
                        f"[data] task{n} needs both task{n}_images and task{n}_labels"
                    )
                if ("test_images" in spec) != ("test_labels" in spec):
                    raise ConfigError(
                        f"[data] task{n} has only one of test_images/test_labels"
                    )
                classes = None
                if "classes" in spec:
                    classes = _parse_int_list("data", f"task{n}_classes",
                                              spec["classes"])
                cap = None
                if "cap" in spec:
                    cap = _parse_int("data", f"task{n}_cap", spec["cap"])
                self.task_files.append(TaskFiles(
                    images=spec["images"].strip(),
                    labels=spec["labels"].strip(),
                    test_images=spec.get("test_images", "").strip() or None,
                    test_labels=spec.get("test_labels", "").strip() or None,
                    classes=classes, cap=cap,
                ))
        if "limit" in section:
            self.limit = _parse_int("data", "limit", section["limit"])
        if "test_limit" in section:
            self.test_limit = _parse_int("data", "test_limit", section["test_limit"])
        if "subset_seed" in section:
            self.subset_seed = _parse_int("data", "subset_seed", section["subset_seed"])

    def _validate(self):
        try:
            grid = self.build_grid()
        except ValueError as exc:
            raise ConfigError(f"[geometry] {exc}") from None
        n_tasks = self.task_count()
        n_wl = len(self.wavelengths)
        if n_wl not in (n_tasks, 1):
            raise ConfigError(
                f"{n_wl} wavelengths cannot serve {n_tasks} tasks: use one "
                "wavelength per task, or a single shared wavelength"
            )
        if self.spacing is not None and len(self.spacing) not in (1, self.layers + 1):
            raise ConfigError(
                f"[geometry] spacing needs 1 or {self.layers + 1} values, "
                f"got {len(self.spacing)}"
            )
        try:
            self.build_geometry()
            self.build_layout()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("limit", "test_limit"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"[data] {name} must be >= 1, got {v}")

    # ---------- builders ----------

    def task_count(self) -> int:
        if self.task_files:
            return len(self.task_files)
        if self.tasks is not None:
            return self.tasks
        return max(len(self.wavelengths), 1)

    def build_grid(self) -> optics.GridSpec:
        return optics.build_grid(self.side, self.pitch, self.pad_factor)

    def build_geometry(self) -> optics.SystemGeometry:
        grid = self.build_grid()
        if self.spacing is None:
            return optics.SystemGeometry.with_uniform_spacing(
                self.wavelengths, grid, self.layers)
        spacing = self.spacing
        if len(spacing) == 1:
            spacing = spacing * (self.layers + 1)
        return optics.SystemGeometry(wavelengths=tuple(self.wavelengths),
                                     grid=grid, layer_count=self.layers,
                                     distances=tuple(spacing))

    def build_layout(self) -> readout.DetectorLayout:
        return readout.build_layout(self.build_grid(), self.categories,
                                    self.task_count(),
                                    region_size=self.region_size,
                                    gap_min=self.gap_min)

    def _load_pair(self, images, labels, tf: TaskFiles, limit):
        ds = data_mod.load_image_set(images, labels)
        if tf.classes is not None:
            ds = data_mod.subset_classes(ds, tf.classes, seed=self.subset_seed,
                                         cap=tf.cap)
        elif tf.cap is not None:
            take = min(tf.cap, len(ds))
            ds = data_mod.LabeledImageSet(images=ds.images[:take],
                                          labels=ds.labels[:take])
        if limit is not None and limit < len(ds):
            ds = data_mod.LabeledImageSet(images=ds.images[:limit],
                                          labels=ds.labels[:limit])
        return ds

    def load_train_sets(self):
        if not self.task_files:
            raise ConfigError("no [data] tasks configured")
        return [self._load_pair(tf.images, tf.labels, tf, self.limit)
                for tf in self.task_files]

    def load_test_sets(self):
        if not self.task_files:
            raise ConfigError("no [data] tasks configured")
        missing = [i for i, tf in enumerate(self.task_files)
                   if tf.test_images is None]
        if missing:
            raise ConfigError(
                f"tasks {missing} have no test_images/test_labels configured"
            )
        return [self._load_pair(tf.test_images, tf.test_labels, tf,
                                self.test_limit)
                for tf in self.task_files]
