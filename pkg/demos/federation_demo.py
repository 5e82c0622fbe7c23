"""Three in-process sites answer one distinct-count query over all their data.

The responsible site collects the other sites' sketches, merges them and
answers. The ledger shows what crossed the union channel compared with
shipping the raw records. Run with ``python demos/federation_demo.py``.
"""

from __future__ import annotations

from sde.core import FederationSpec, StreamRecord, SynopsisSpec
from sde.federation import FederationHarness


def main() -> None:
    spec = SynopsisSpec("users", "HyperLogLog", "clicks", key_field=1, params={"m": 12},
                        federation=FederationSpec("site-0"))
    with FederationHarness(3) as h:
        h.build(spec)
        for k, site in enumerate(h.site_ids):
            # sites see overlapping users: 0..59999, 30000..89999, 60000..119999
            h.engines[site].ingest_many(StreamRecord("clicks", site, i, (site, k * 30_000 + i))
                                        for i in range(60_000))
        h.flush()
        for site in h.site_ids:
            resp = h.query(site, "users")
            print(f"asked {site}: ~{resp.value:.0f} distinct users (answered by {resp.site_id}, exact 120000)")
        for (sid, src, dst), st in sorted(h.ledger.links().items()):
            print(f"{src} -> {dst}: {st.frames} frames, {st.bytes} bytes shipped vs {st.raw_bytes} raw")


if __name__ == "__main__":
    main()
