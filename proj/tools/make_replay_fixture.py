#!/usr/bin/env python3
"""Write a replay script that covers a complete discovery run.

Every answer is scoped to the niche it serves, so the script does not depend on
the order in which niches are visited. Counts are upper bounds for the given
shape; unused entries are harmless.

    tools/make_replay_fixture.py --niche-size 2 --generations 2 > tests/fixtures/replay/small.jsonl
"""

import argparse
import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
TASKS = ["de-operator-selection", "pso-parameter-control", "algorithm-selection"]

# Reward variants per task, simplest first. Each is valid for its task schema.
VARIANTS = {
    "de-operator-selection": [
        ("Reward accepted trials in proportion to how much they improved the parent.",
         "gain = clip(ctx.delta_cost / max(abs(ctx.parent_cost), 1e-12), 0.0, 1.0)\n"
         "return ctx.accepted * (0.5 + gain), {\"gain\": gain}"),
        ("Pay extra for improving the global best, scaled by population spread.",
         "bonus = clip(ctx.gbest_improve / max(ctx.std_cost, 1e-12), 0.0, 1.0)\n"
         "r = 1.0 * ctx.accepted + bonus\n"
         "return r, {\"bonus\": bonus}"),
        ("Late acceptances matter more than early ones.",
         "r = ctx.accepted * (0.5 + ctx.progress)\n"
         "return r, {\"weighted\": r}"),
        ("Penalize rejected trials mildly so the agent avoids wasteful operators.",
         "r = 1.0 if ctx.accepted > 0 else -0.1\n"
         "return r, {\"r\": r}"),
    ],
    "pso-parameter-control": [
        ("Reward the relative size of the global-best improvement.",
         "gain = clip((ctx.pre_gbest - ctx.gbest_val) / max(abs(ctx.pre_gbest), 1e-12), 0.0, 1.0)\n"
         "return gain, {\"gain\": gain}"),
        ("Improvement indicator plus a spread-normalized bonus.",
         "hit = 1.0 if ctx.gbest_val < ctx.pre_gbest else 0.0\n"
         "bonus = clip(ctx.gbest_improve / max(ctx.std_cost, 1e-12), 0.0, 1.0)\n"
         "return hit + 0.5 * bonus, {\"hit\": hit, \"bonus\": bonus}"),
        ("Improvements late in the run are worth more.",
         "hit = 1.0 if ctx.gbest_val < ctx.pre_gbest else 0.0\n"
         "return hit * (0.5 + ctx.progress), {\"hit\": hit}"),
        ("Small penalty for stagnation, unit reward for progress.",
         "r = 1.0 if ctx.gbest_val < ctx.pre_gbest else -0.05\n"
         "return r, {\"r\": r}"),
    ],
    "algorithm-selection": [
        ("Compress large improvements so early gains do not dominate.",
         "gain = max(ctx.last_cost - ctx.current_gbest, 0.0) / ctx.cost_scale_factor\n"
         "r = log1p(gain)\n"
         "return r, {\"gain\": gain}"),
        ("Indicator of improvement over the interval.",
         "r = 1.0 if ctx.current_gbest < ctx.last_cost else 0.0\n"
         "return r, {\"r\": r}"),
        ("Scaled improvement weighted by the share of budget already spent.",
         "gain = (ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor\n"
         "r = gain * (0.5 + ctx.FEs / ctx.MaxFEs)\n"
         "return r, {\"gain\": gain}"),
        ("Bounded scaled improvement.",
         "gain = (ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor\n"
         "r = clip(gain, -1.0, 1.0)\n"
         "return r, {\"gain\": gain}"),
    ],
}

GENERATION_TEMPLATES = ["m1_mutate", "m2", "m3_mutate", "c1", "c2", "kt_execute"]


def individual(idea, code):
    return f"{idea}\n\n```rsl\n{code}\n```\n"


def discovered(task):
    text = (ROOT / "data" / "rewards" / "discovered" / f"{task}.rsl").read_text()
    lines = [l for l in text.splitlines() if not l.startswith("#!")]
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--niche-size", type=int, default=2)
    ap.add_argument("--generations", type=int, default=2)
    ap.add_argument("--tasks", nargs="+", default=TASKS)
    args = ap.parse_args()
    n, g = args.niche_size, args.generations
    out = []

    def emit(template, response, task=None):
        entry = {"template_id": template, "response": response}
        if task:
            entry["task"] = task
        out.append(entry)

    for task in args.tasks:
        pool = VARIANTS[task]
        # The published reward first: it should beat the anchor and be accepted.
        emit("init", individual("Published reward for this task, transcribed.", discovered(task)), task)
        for i in range(5 * max(n - 1, 1) - 1):
            idea, code = pool[i % len(pool)]
            emit("init", individual(idea, code), task)
        slot = 0
        for _ in range(g):
            for _ in range(n):
                emit("m1_reflect", "The reward is flat on multimodal instances; "
                                   "make it respond to small late improvements.", task)
                for template in GENERATION_TEMPLATES[:-1]:
                    idea, code = pool[slot % len(pool)]
                    slot += 1
                    emit(template, individual(f"{idea} ({template} variant {slot})", code), task)
            idea, code = pool[slot % len(pool)]
            slot += 1
            emit("kt_execute", individual(f"Adapted for {task}: {idea}", code), task)
    for _ in range(g):
        emit("m3_reflect", "```summary\nScaled improvement signals outlast binary ones; "
                           "clipping keeps rare large gains from dominating.\n```")
        ring = [{"source_task": s, "target_task": t,
                 "rationale": "Both tasks reward improvement of the best cost.",
                 "transfer_strategy_guidance": "Map best-cost fields one to one."}
                for s, t in zip(args.tasks, args.tasks[1:] + args.tasks[:1]) if s != t]
        emit("kt_reflect", "```json\n" + json.dumps(ring, indent=2) + "\n```")
    for entry in out:
        print(json.dumps(entry, sort_keys=True))


if __name__ == "__main__":
    main()
