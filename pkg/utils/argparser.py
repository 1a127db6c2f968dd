import argparse
import logging

from enums.task import Task

COMMANDS = ("adm", "finetune", "inpaint", "bench", "eval", "sweep")


class SubjectInpaintArgumentParser(argparse.ArgumentParser):
    def __init__(self):
        super().__init__(
            description="Subject-driven inpainting: build regularization data, "
            "fine-tune adapters, inpaint, build benchmarks and evaluate."
        )
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            "--debug", "-d", action="store_true", help="Debug log level"
        )
        common.add_argument(
            "--config", "-c", help="TOML run configuration (defaults apply otherwise)"
        )
        common.add_argument(
            "--set",
            dest="overrides",
            metavar="SECTION.KEY=VALUE",
            action="append",
            default=[],
            type=self.TypeConverter.override,
            help="Override one config value; the value is parsed as TOML.",
        )
        common.add_argument(
            "--seed", type=self.TypeConverter.nonnegative_int, help="Base seed"
        )
        common.add_argument(
            "--no-dif",
            action="store_true",
            help="Single-stage full-frame sampling instead of the two-stage sampler",
        )
        common.add_argument(
            "--no-tas",
            action="store_true",
            help="Condition on the raw prompt embedding",
        )
        common.add_argument(
            "--no-adm",
            action="store_true",
            help="Train without the regularization set",
        )
        common.add_argument(
            "--ablate",
            action="append",
            default=[],
            choices=["no-dif", "no-tas", "no-adm"],
            help="Same as the matching --no-* flag",
        )

        subparsers = self.add_subparsers(
            dest="command", metavar="command", parser_class=argparse.ArgumentParser
        )
        subparsers.required = True

        adm = subparsers.add_parser(
            "adm", parents=[common], help="Build the attribute dictionary and regularization set"
        )
        adm.add_argument("--subject-dir", required=True, help="Directory of subject images")
        adm.add_argument("--subject-class", help="Class noun, e.g. 'teapot'")
        adm.add_argument(
            "--reg-count",
            type=self.TypeConverter.positive_int,
            help="Number of regularization prompts/images (default: 30)",
        )

        finetune = subparsers.add_parser(
            "finetune", parents=[common], help="Fine-tune adapters on a subject"
        )
        finetune.add_argument("--subject-dir", required=True, help="Directory of subject images")
        finetune.add_argument("--subject-class", help="Class noun, e.g. 'teapot'")
        finetune.add_argument(
            "--reg-dir",
            help="Existing regularization set; built in this run when omitted",
        )
        finetune.add_argument(
            "--reg-count", type=self.TypeConverter.positive_int, help="Regularization set size"
        )
        finetune.add_argument(
            "--steps", type=self.TypeConverter.nonnegative_int, help="Optimizer steps"
        )

        inpaint = subparsers.add_parser(
            "inpaint", parents=[common], help="Inpaint a subject into a background"
        )
        inpaint.add_argument("--background", help="Background image")
        inpaint.add_argument("--mask", help="Mask PNG (255 marks the region)")
        inpaint.add_argument("--prompt", help="Prompt carrying the identity token")
        inpaint.add_argument("--checkpoint", help="Checkpoint directory from finetune")
        inpaint.add_argument(
            "--dictionary",
            help="Attribute dictionary JSON (default: the checkpoint's copy)",
        )
        inpaint.add_argument(
            "--lambda",
            dest="lambda_split",
            type=self.TypeConverter.unit_interval,
            help="Fraction of steps spent in local content generation",
        )
        inpaint.add_argument(
            "--multi",
            help="JSON manifest of requests composited one after another",
        )
        inpaint.add_argument(
            "--trace", action="store_true", help="Dump per-step latents"
        )

        bench = subparsers.add_parser(
            "bench", parents=[common], help="Assemble a benchmark manifest"
        )
        bench.add_argument("--image-dir", required=True, help="Background images")
        bench.add_argument(
            "--annotations", help="Box annotation JSON (default: <image-dir>/annotations.json)"
        )
        bench.add_argument(
            "--subjects",
            nargs="+",
            required=True,
            type=self.TypeConverter.subject,
            metavar="ID:CLASS",
            help="Subjects as id:class pairs",
        )
        bench.add_argument(
            "--per-subject", type=self.TypeConverter.positive_int, help="Backgrounds per subject"
        )

        evaluate = subparsers.add_parser(
            "eval", parents=[common], help="Score inpainting results"
        )
        evaluate.add_argument("--results-dir", required=True, help="Directory of <sample id>.png")
        evaluate.add_argument("--benchmark", required=True, help="Benchmark manifest JSON")
        evaluate.add_argument(
            "--subjects-dir", required=True, help="Directory with one folder of images per subject"
        )
        evaluate.add_argument(
            "--task",
            choices=[t.value for t in Task],
            default=Task.IDENTITY.value,
            help="Which split to score",
        )
        evaluate.add_argument(
            "--judge-requests",
            action="store_true",
            help="Also write judge_requests.jsonl for an external attribute scorer",
        )

        sweep = subparsers.add_parser(
            "sweep", parents=[common], help="Run a command once per value of one config key"
        )
        sweep.add_argument("--param", required=True, help="Dotted config key")
        sweep.add_argument("--values", nargs="+", required=True, help="TOML scalars")
        sweep.add_argument(
            "child",
            nargs=argparse.REMAINDER,
            help="The command to run, e.g. 'inpaint --background ...'",
        )

    def parse_args(self, args=None, namespace=None):
        args = super().parse_args(args, namespace)
        args.overrides = list(args.overrides) + self.flag_overrides(args)
        if args.command == "sweep":
            if args.child and args.child[0] == "--":
                args.child = args.child[1:]
            if not args.child or args.child[0] not in COMMANDS[:-1]:
                self.error("sweep needs a child command: one of {}".format(", ".join(COMMANDS[:-1])))
        if args.command == "inpaint" and not args.multi:
            missing = [
                flag
                for flag, value in (
                    ("--background", args.background),
                    ("--mask", args.mask),
                    ("--prompt", args.prompt),
                )
                if not value
            ]
            if missing:
                self.error("inpaint needs {} (or --multi)".format(", ".join(missing)))
        return args

    @staticmethod
    def flag_overrides(args):
        overrides = []
        ablated = set(args.ablate)
        for stage in ("dif", "tas", "adm"):
            if getattr(args, "no_{}".format(stage)) or "no-{}".format(stage) in ablated:
                overrides.append("ablation.{}=false".format(stage))
        for key, dest in (
            ("schedule.lambda_split", "lambda_split"),
            ("adm.num_prompts", "reg_count"),
            ("training.steps", "steps"),
            ("bench.per_subject", "per_subject"),
            ("adm.subject_class", "subject_class"),
            ("seed", "seed"),
        ):
            value = getattr(args, dest, None)
            if value is not None:
                if isinstance(value, str):
                    value = '"{}"'.format(value)
                overrides.append("{}={}".format(key, value))
        return overrides

    class TypeConverter:
        @classmethod
        def positive_int(cls, i):
            i = int(i)
            if i <= 0:
                msg = "Not a valid positive integer: {0}".format(i)
                raise argparse.ArgumentTypeError(msg)
            return i

        @classmethod
        def nonnegative_int(cls, i):
            i = int(i)
            if i < 0:
                msg = "Not a valid nonnegative integer: {0}".format(i)
                raise argparse.ArgumentTypeError(msg)
            return i

        @classmethod
        def unit_interval(cls, value):
            try:
                value = float(value)
            except ValueError as e:
                logging.critical(e)
                raise argparse.ArgumentTypeError("Not a number: '{0}'".format(value))
            if not 0.0 <= value <= 1.0:
                raise argparse.ArgumentTypeError(
                    "Not in [0, 1]: {0}".format(value)
                )
            return value

        @classmethod
        def override(cls, text):
            key, sep, value = text.partition("=")
            if not sep or not key.strip() or not value.strip():
                raise argparse.ArgumentTypeError(
                    "Not a valid override: '{0}', expected section.key=value".format(text)
                )
            return text

        @classmethod
        def subject(cls, text):
            subject_id, sep, subject_class = text.partition(":")
            if not sep or not subject_id or not subject_class:
                raise argparse.ArgumentTypeError(
                    "Not a valid subject: '{0}', expected id:class".format(text)
                )
            return subject_id, subject_class
