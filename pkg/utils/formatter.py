from datetime import datetime, timezone

from enums.date_format import DateFormat


def format_date(date_object, format_string=DateFormat.RUN_DIR_FORMAT.value):
    """
    This function doesn't manipulate the date itself at all, it just
    formats it for run directory names and manifests.
    """
    return datetime.strftime(date_object, format_string)


def utc_now():
    return datetime.now(timezone.utc)


def format_metric(value):
    return "{:.4f}".format(value)


def render_table(header, rows):
    """
    Plain-text table with left-aligned first column and right-aligned
    numeric columns.
    """
    cells = [list(header)] + [
        [row[0]] + [format_metric(v) if isinstance(v, float) else str(v) for v in row[1:]]
        for row in rows
    ]
    widths = [max(len(str(r[i])) for r in cells) for i in range(len(header))]

    def line(row):
        return " | ".join(
            str(cell).ljust(widths[i]) if i == 0 else str(cell).rjust(widths[i])
            for i, cell in enumerate(row)
        )

    out = [line(cells[0]), "-+-".join("-" * w for w in widths)]
    out.extend(line(row) for row in cells[1:])
    return "\n".join(out)
