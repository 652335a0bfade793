"""Header + raw payload container used by all binary ktrecon files.

Layout::

    <magic>\\n
    <one-line JSON header, sorted keys>\\n
    <raw payload bytes>
"""
import json

from .errors import MalformedFile


def write_container(path, magic, header, payload):
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii") + b"\n")
        fh.write(line.encode("utf-8") + b"\n")
        fh.write(payload)


def read_container(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    first = raw.find(b"\n")
    if first < 0 or raw[:first] != magic.encode("ascii"):
        raise MalformedFile(f"{path}: not a {magic} file")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise MalformedFile(f"{path}: missing header line")
    try:
        header = json.loads(raw[first + 1:second].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: unreadable header ({exc})") from None
    if not isinstance(header, dict):
        raise MalformedFile(f"{path}: header is not a mapping")
    return header, raw[second + 1:]


def require_keys(header, keys, path):
    missing = [k for k in keys if k not in header]
    if missing:
        raise MalformedFile(f"{path}: header missing {', '.join(missing)}")
