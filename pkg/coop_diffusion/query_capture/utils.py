import logging
import textwrap
import typing
from collections import defaultdict
from contextlib import ContextDecorator, ExitStack

from .capture import CapturedQuery, denoiser_query_capture

logger = logging.getLogger(__name__)

TimestepRange = typing.Tuple[int, int]


class TimestepPartitionExceededException(Exception):
    def __init__(
        self,
        *,
        allowed: typing.Mapping[str, TimestepRange],
        violations: typing.List[CapturedQuery],
        run_name: typing.Optional[str] = None,
    ):
        self.allowed = dict(allowed)
        self.violations = violations
        self.violations_pretty_str = self._prettify_violations(violations)
        message_lines = [
            f"Timestep partition violated{(' on ' + run_name) if run_name else ''}",
            "Allowed: "
            + ", ".join(f"{name}=[{lo}, {hi}]" for name, (lo, hi) in self.allowed.items()),
            f"Out-of-range queries={len(violations)}, queries={self.violations_pretty_str}",
        ]
        self.message = "\n".join(line for line in message_lines if line)
        super().__init__(self.message)

    def _prettify_violations(self, violations):
        line_template = textwrap.dedent(
            """
            {i}. {repeated}
            model={model} t={t} cond={cond}""".lstrip(
                "\n"
            )
        )

        repetitions_dict = defaultdict(list)
        for i, q in enumerate(violations):
            repetitions_dict[(q["model"], q["t"])].append((i, q))

        line_list = []
        for repetitions in repetitions_dict.values():
            (i, q) = repetitions[0]
            count = len(repetitions)
            line_list.append(
                line_template.format(
                    i=i,
                    repeated=(f"(repeats {count}x)" if count > 1 else ""),
                    model=q["model"],
                    t=q["t"],
                    cond=q["cond"],
                )
            )

        pretty = "\n".join(line_list)
        pretty = "\n\t".join(s for s in pretty.split("\n") if s)  # strip empty lines, then ident
        return "\n\t" + pretty


class restrict_timesteps(ContextDecorator):  # noqa
    """
    Guards a run so each named denoiser is only queried inside its timestep range.
    Denoisers not named in `allowed` are not checked.
    """

    def __init__(
        self,
        allowed: typing.Mapping[str, TimestepRange],
        *,
        run_name=None,
        only_log=False,
    ):
        self._allowed = dict(allowed)
        self._run_name = run_name
        self._only_log = only_log

    def get_queries(self) -> typing.List[CapturedQuery]:
        return self._denoiser_query_capture.captured_queries

    def __enter__(self):
        self._exit_stack = ExitStack().__enter__()
        self._denoiser_query_capture = denoiser_query_capture()
        self._exit_stack.enter_context(self._denoiser_query_capture)
        return self

    def __exit__(self, exc_type, *args):
        self._exit_stack.close()
        if exc_type is not None:
            return
        violations = [q for q in self.get_queries() if self._is_outside(q)]
        self._forbid_partition_violation(violations)

    def _is_outside(self, query: CapturedQuery) -> bool:
        if query["model"] not in self._allowed:
            return False
        lo, hi = self._allowed[query["model"]]
        return not lo <= query["t"] <= hi

    def _forbid_partition_violation(self, violations):
        if not violations:
            return
        exc = TimestepPartitionExceededException(
            allowed=self._allowed, violations=violations, run_name=self._run_name
        )
        if self._only_log:
            logger.warning(exc.message)
        else:
            raise exc
