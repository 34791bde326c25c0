"""Binary checkpoints.

Layout: ``b"LGDC"``, u32 version, then per parameter: u32 name length, UTF-8
name, u32 rank, rank x u32 dims, float64 little-endian payload. Entries run to
end of file. Adapted prototypes ride along as ``mldl.mu`` and ``mldl.r``.
"""

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from lgdc.core.exceptions import CheckpointError
from lgdc.core.logger import get_logger
from lgdc.models.mldl import PrototypeSet
from lgdc.models.network import LGDCNetwork
from lgdc.ndcore import Tensor
from lgdc.repositories.base import BaseRepository

logger = get_logger(__name__)

MAGIC = b"LGDC"
VERSION = 1
_U32 = struct.Struct("<I")
PROTOTYPE_KEYS = ("mldl.mu", "mldl.r")


def encode_checkpoint(state: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION)]
    for name, value in state.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(dim) for dim in array.shape)
        chunks.append(array.tobytes())
    return b"".join(chunks)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> OrderedDict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{source}: not an LGDC checkpoint")
    if len(raw) < 8:
        raise CheckpointError(f"{source}: truncated header")
    (version,) = _U32.unpack_from(raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")

    state: OrderedDict[str, np.ndarray] = OrderedDict()
    offset = 8
    try:
        while offset < len(raw):
            (length,) = _U32.unpack_from(raw, offset)
            offset += 4
            name = raw[offset : offset + length].decode("utf-8")
            offset += length
            (rank,) = _U32.unpack_from(raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(raw):
                raise CheckpointError(f"{source}: payload of {name!r} is truncated")
            state[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
            offset += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt checkpoint: {exc}") from exc
    return state


class CheckpointRepository(BaseRepository[OrderedDict]):
    def load(self) -> OrderedDict[str, np.ndarray]:
        if not self.exists():
            raise CheckpointError(f"checkpoint {self.path} not found")
        return decode_checkpoint(self.path.read_bytes(), str(self.path))

    def save(self, state: dict[str, np.ndarray]) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        raw = encode_checkpoint(state)
        self.path.write_bytes(raw)
        logger.info("checkpoint_saved", path=str(self.path), entries=len(state), sha256=hashlib.sha256(raw).hexdigest())
        return self.path

    def sha256(self) -> str:
        if not self.exists():
            raise CheckpointError(f"checkpoint {self.path} not found")
        return hashlib.sha256(self.path.read_bytes()).hexdigest()

    def save_network(self, network: LGDCNetwork, prototypes: PrototypeSet | None = None) -> Path:
        state = network.store.state_dict()
        if prototypes is not None:
            state["mldl.mu"] = prototypes.mu.numpy()
            state["mldl.r"] = np.array([prototypes.r])
        return self.save(state)

    def load_into(self, network: LGDCNetwork) -> PrototypeSet | None:
        """Restore parameters; returns stored prototypes when the checkpoint has them."""
        state = self.load()
        params = OrderedDict((k, v) for k, v in state.items() if k not in PROTOTYPE_KEYS)
        unknown = [name for name in params if name not in network.store]
        if unknown:
            raise CheckpointError(f"checkpoint has parameters the network lacks: {', '.join(unknown)}")
        network.store.load_state_dict(params)
        if "mldl.mu" in state:
            r = float(state["mldl.r"].reshape(-1)[0]) if "mldl.r" in state else network.config.concentration
            return PrototypeSet(Tensor(state["mldl.mu"]), r)
        return None
