"""Brute-force reference detectors over generated workflow dicts.

Works directly on the plain document produced by ``synth.generate`` and
the hand-written fact tables; nothing here imports the package.
"""

from __future__ import annotations

from collections import Counter

from synth import IMAGE_FACTS, KEY_FACTS, PATH_FACTS, PIP_DIR_PATH, PUSHING, SCRIPT_FACTS

RESERVED = {"stages", "variables", "default", "image", "cache", "include", "workflow"}


def _merge(base, over):
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for k, v in over.items():
            out[k] = _merge(base[k], v) if k in base else v
        return out
    return over


def effective_jobs(doc: dict) -> dict:
    defaults = {}
    if "image" in doc:
        defaults["image"] = ("global", doc["image"])
    for key, value in (doc.get("default") or {}).items():
        defaults[key] = ("global", value)
    out = {}
    for name, job in doc.items():
        if name in RESERVED or name.startswith("."):
            continue
        sites = {k: ("job", name) for k in job}
        eff = dict(job)
        if "extends" in job:
            tmpl = doc[job["extends"]]
            eff = _merge(tmpl, job)
            for k in tmpl:
                if k not in job:
                    sites[k] = ("tmpl",)
        inherit = (job.get("inherit") or {}).get("default", True)
        if inherit is not False:
            for key, (site, value) in defaults.items():
                if key not in eff:
                    eff[key] = value
                    sites[key] = (site,)
        eff["_sites"] = sites
        out[name] = eff
    return out


def caches_of(job: dict) -> list:
    cache = job.get("cache")
    if cache is None:
        return []
    return cache if isinstance(cache, list) else [cache]


def _key_fact(node):
    if isinstance(node, dict):
        # merged through extends, so any files/prefix combination can occur
        return ("files", tuple(sorted(node["files"])), node.get("prefix"))
    return KEY_FACTS[node]


def waits_for(doc: dict) -> set:
    jobs = effective_jobs(doc)
    order = {s: i for i, s in enumerate(doc["stages"])}
    pairs = set()
    for down, job in jobs.items():
        if "needs" in job:
            for need in job["needs"]:
                pairs.add((down, need if isinstance(need, str) else need["job"]))
        else:
            for up, other in jobs.items():
                if order[other["stage"]] < order[job["stage"]]:
                    pairs.add((down, up))
    return pairs


def stage_product(doc: dict) -> set:
    order = {s: i for i, s in enumerate(doc["stages"])}
    jobs = effective_jobs(doc)
    return {(d, u) for d in jobs for u in jobs if order[jobs[u]["stage"]] < order[jobs[d]["stage"]]}


def expected(doc: dict, is_group) -> dict:
    jobs = effective_jobs(doc)
    global_vars = doc.get("variables") or {}
    out = {s: [] for s in ("SM1", "SM2", "SM3", "SM4", "SM7", "SM9", "SM10")}

    for name, job in jobs.items():
        art = job.get("artifacts")
        if art and "expire_in" not in art:
            out["SM1"].append((name,))

    for down, up in waits_for(doc):
        consumer = jobs[down]
        declares = "dependencies" in consumer or any(
            isinstance(n, dict) and "artifacts" in n for n in consumer.get("needs", ()))
        if jobs[up].get("artifacts") and not declares:
            out["SM2"].append((up, down))

    for name, job in jobs.items():
        managers = set()
        for line in job["script"]:
            managers |= SCRIPT_FACTS[line].get("managers", set())
        if not managers:
            continue
        covered = set()
        variables = job.get("variables") or {}
        for cache in caches_of(job):
            for path in cache["paths"]:
                covered |= PATH_FACTS[path]
                if path == PIP_DIR_PATH and variables.get("PIP_CACHE_DIR") == PIP_DIR_PATH:
                    covered.add("pip")
        if managers - covered:
            out["SM3"].append((name,))

    for name, job in jobs.items():
        if "CACHE_FALLBACK_KEY" in global_vars or "CACHE_FALLBACK_KEY" in (job.get("variables") or {}):
            continue
        if any("fallback_keys" not in c for c in caches_of(job)):
            out["SM4"].append((name,))

    pushers: dict = {}
    for name, job in jobs.items():
        for cache in caches_of(job):
            fact = _key_fact(cache.get("key"))
            if fact is None or cache.get("policy") not in PUSHING:
                continue
            pushers.setdefault(fact, set()).add(name)
    out["SM7"] = [tuple(sorted(names)) for names in pushers.values() if len(names) >= 2]

    if is_group is True:
        sites: dict = {}
        for name, job in jobs.items():
            if "image" in job:
                expanded, resolved, hub, proxied = IMAGE_FACTS[job["image"]]
                if resolved and hub and not proxied:
                    sites.setdefault((expanded, job["_sites"]["image"]), set()).add(name)
            built = set()
            for line in job["script"]:
                built |= SCRIPT_FACTS[line].get("builds", set())
            for i, line in enumerate(job["script"]):
                pull = SCRIPT_FACTS[line].get("pulls")
                if pull and pull[1] and pull[0] not in built:
                    sites.setdefault((pull[0], ("line", name, i)), set()).add(name)
        out["SM9"] = [(image, tuple(sorted(names))) for (image, _), names in sites.items()]

    for name, job in jobs.items():
        count = sum(SCRIPT_FACTS[line].get("uncached_builds", 0) for line in job["script"])
        out["SM10"].extend([(name,)] * count)

    return {s: sorted(v) for s, v in out.items()}


def observed(findings) -> dict:
    """Project package findings onto the oracle's comparison shape."""
    out = {s: [] for s in ("SM1", "SM2", "SM3", "SM4", "SM7", "SM9", "SM10")}
    for f in findings:
        if f.smell == "SM9":
            image = f.evidence.split(" pulls ", 1)[1].split(" directly", 1)[0]
            out["SM9"].append((image, tuple(f.jobs)))
        else:
            out[f.smell].append(tuple(f.jobs))
    return {s: sorted(v) for s, v in out.items()}


def diff(expected_: dict, observed_: dict) -> dict:
    bad = {}
    for smell in expected_:
        if Counter(expected_[smell]) != Counter(observed_[smell]):
            bad[smell] = (expected_[smell], observed_[smell])
    return bad
