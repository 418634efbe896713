import hashlib
from importlib import metadata

BUFF_SIZE = 1024 * 64


def get_mlact_version():
    """Get version of the mlact package"""
    try:
        return metadata.version("mlact")
    except metadata.PackageNotFoundError:
        return "unknown"


def hash_stream(hash_type, stream):
    """Hashes the stream with given hash_type hasher
    :returns: number of bytes read and a "type:hexdigest" string
    :rtype: tuple
    """
    try:
        hasher = hashlib.new(hash_type)
    except ValueError:
        return 0, ""

    size = 0

    while True:
        buff = stream.read(BUFF_SIZE)
        size += len(buff)
        hasher.update(buff)
        if not buff:
            break

    return size, hash_type + ":" + hasher.hexdigest()


def hash_file(path, hash_type="sha256"):
    """Digest of a written artifact, used to report reproducible outputs"""
    with open(path, "rb") as fh:
        return hash_stream(hash_type, fh)


def parse_int_list(text):
    """Parses "3,7, 11" into [3, 7, 11]"""
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise ValueError("expected a comma separated list of integers")
    try:
        return [int(item) for item in items]
    except ValueError:
        raise ValueError("invalid integer list: %s" % text)


def parse_size(text):
    """Parses an "HxW" size string"""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError("size must look like HxW, got %s" % text)
    try:
        height, width = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError("size must look like HxW, got %s" % text)
    if height < 1 or width < 1:
        raise ValueError("size must be positive, got %s" % text)
    return height, width
