#!/usr/bin/env python3
"""Regenerate e2-vectors.json: hand-built E2-lite frames and what they
must decode to. Written without reference to the Rust codec."""

import json
import struct
from pathlib import Path

LAYER = {"RLC": 1, "PDCP": 2, "MAC": 3}
KIND = {
    "Setup": 1,
    "SetupAck": 2,
    "SubscriptionRequest": 3,
    "SubscriptionResponse": 4,
    "Indication": 5,
    "ControlRequest": 6,
    "ControlAck": 7,
    "Disconnect": 8,
    "ProtocolError": 9,
}
OUTCOME = {"Applied": 0, "Rejected": 1, "Unsupported": 2}


def text(s):
    b = s.encode("utf-8")
    return struct.pack(">H", len(b)) + b


def blob(b):
    return struct.pack(">H", len(b)) + bytes(b)


def frame(kind, payload, magic=b"E2", version=1, length=None):
    n = len(payload) if length is None else length
    return magic + bytes([version, kind]) + struct.pack(">I", n) + payload


def payload(m):
    k = m["kind"]
    if k == "Setup":
        return text(m["agent_id"]) + blob(m["ran_functions"])
    if k == "SetupAck":
        return text(m["ric_id"])
    if k == "SubscriptionRequest":
        spec = m["spec"]
        ids = sorted(LAYER[x] for x in spec["metric_set"])
        out = struct.pack(">IIH", m["sub_id"], spec["report_period_ms"], len(ids)) + bytes(ids)
        if "cell_filter" in spec:
            out += b"\x01" + text(spec["cell_filter"])
        else:
            out += b"\x00"
        return out
    if k == "SubscriptionResponse":
        return struct.pack(">IB", m["sub_id"], int(m["accepted"])) + text(m["reason"])
    if k == "Indication":
        out = struct.pack(">IQH", m["sub_id"], m["seq"], len(m["samples"]))
        for s in m["samples"]:
            out += struct.pack(">QB", s["t"], LAYER[s["layer"]])
            out += struct.pack(">d", s["latency"])
            out += text(s["ue_id"]) + text(s["cell_id"])
        return out
    if k == "ControlRequest":
        return struct.pack(">I", m["ctrl_id"]) + text(m["target_cell"]) + blob(m["action"])
    if k == "ControlAck":
        return struct.pack(">IB", m["ctrl_id"], OUTCOME[m["outcome"]])
    if k == "Disconnect":
        return bytes([m["reason"]])
    if k == "ProtocolError":
        return struct.pack(">H", m["code"]) + text(m["detail"])
    raise ValueError(k)


def ok(name, m):
    return {"name": name, "hex": frame(KIND[m["kind"]], payload(m)).hex(), "expect": m}


def sample(t, layer, latency, ue="ag-ue1", cell="ag-bs"):
    return {"t": t, "layer": layer, "latency": latency, "ue_id": ue, "cell_id": cell}


messages = [
    ("setup", {"kind": "Setup", "agent_id": "ag-bs-gnb", "ran_functions": [1, 2, 3]}),
    ("setup-empty-functions", {"kind": "Setup", "agent_id": "", "ran_functions": []}),
    ("setup-ack", {"kind": "SetupAck", "ric_id": "ric-s1"}),
    ("sub-request", {"kind": "SubscriptionRequest", "sub_id": 7,
                     "spec": {"report_period_ms": 100, "metric_set": ["RLC", "PDCP", "MAC"]}}),
    ("sub-request-filtered", {"kind": "SubscriptionRequest", "sub_id": 4294967295,
                              "spec": {"report_period_ms": 1, "metric_set": ["MAC"], "cell_filter": "curtiss-bs"}}),
    ("sub-response-accept", {"kind": "SubscriptionResponse", "sub_id": 7, "accepted": True, "reason": ""}),
    ("sub-response-reject", {"kind": "SubscriptionResponse", "sub_id": 8, "accepted": False,
                             "reason": "metric set not offered"}),
    ("indication-empty", {"kind": "Indication", "sub_id": 1, "seq": 1, "samples": []}),
    ("indication", {"kind": "Indication", "sub_id": 3, "seq": 42, "samples": [
        sample(100, "RLC", 4.0), sample(100, "PDCP", 5.25), sample(110, "MAC", 0.0),
        sample(18446744073709551615, "MAC", 1e-300, ue="ü☃", cell=""),
    ]}),
    ("control-request", {"kind": "ControlRequest", "ctrl_id": 9, "target_cell": "ag-bs",
                         "action": list(b"throttle cell=ag-bs mean_ms=12.000")}),
    ("control-ack", {"kind": "ControlAck", "ctrl_id": 9, "outcome": "Applied"}),
    ("control-ack-unsupported", {"kind": "ControlAck", "ctrl_id": 0, "outcome": "Unsupported"}),
    ("disconnect", {"kind": "Disconnect", "reason": 2}),
    ("protocol-error", {"kind": "ProtocolError", "code": 3, "detail": "no active subscription 99"}),
]

vectors = [ok(n, m) for n, m in messages]

good_setup = payload(messages[0][1])
bad = [
    ("bad-magic", frame(1, good_setup, magic=b"E3"), "BadMagic"),
    ("bad-version", frame(1, good_setup, version=2), "UnsupportedVersion"),
    ("unknown-kind-0", frame(0, b""), "UnknownKind"),
    ("unknown-kind-10", frame(10, b""), "UnknownKind"),
    ("too-large", frame(5, b"", length=65536), "FrameTooLarge"),
    ("short-header", b"E2\x01", "Incomplete"),
    ("truncated-payload", frame(1, good_setup)[:-1], "Incomplete"),
    ("trailing-bytes", frame(8, b"\x00\x00"), "Malformed"),
    ("bad-bool", frame(4, struct.pack(">IB", 1, 2) + text("")), "Malformed"),
    ("bad-layer", frame(5, struct.pack(">IQH", 1, 1, 1) + struct.pack(">QB", 1, 4)
                        + struct.pack(">d", 1.0) + text("u") + text("c")), "Malformed"),
    ("negative-latency", frame(5, struct.pack(">IQH", 1, 1, 1) + struct.pack(">QB", 1, 1)
                               + struct.pack(">d", -1.0) + text("u") + text("c")), "Malformed"),
    ("nan-latency", frame(5, struct.pack(">IQH", 1, 1, 1) + struct.pack(">QB", 1, 1)
                          + bytes.fromhex("7ff8000000000000") + text("u") + text("c")), "Malformed"),
    ("zero-period", frame(3, struct.pack(">IIH", 1, 0, 1) + b"\x01\x00"), "Malformed"),
    ("empty-metric-set", frame(3, struct.pack(">IIH", 1, 100, 0) + b"\x00"), "Malformed"),
    ("bad-utf8", frame(2, struct.pack(">H", 2) + b"\xff\xfe"), "Malformed"),
    ("bad-outcome", frame(7, struct.pack(">IB", 1, 3)), "Malformed"),
    ("count-overflow", frame(5, struct.pack(">IQH", 1, 1, 65535)), "Malformed"),
]
vectors += [{"name": n, "hex": b.hex(), "error": e} for n, b, e in bad]

out = Path(__file__).with_name("e2-vectors.json")
out.write_text(json.dumps(vectors, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
print(f"wrote {len(vectors)} vectors to {out}")
