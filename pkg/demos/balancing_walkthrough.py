"""Walk through the two-stage augmentation balancing arithmetic.

Run:

    python3 demos/balancing_walkthrough.py

Class imbalance is fixed before any training happens, by generating
augmented copies of under-represented images. Binary screening sets are
topped up to the majority-class count in a single stage. Ternary typing
sets grow in two stages: the smallest class times five sets the first
target for every class, then everything is multiplied by five again, so
the corpus ends up twenty-five times the smallest class per label.

This script only plans; no images are read or written. The plan is the
complete recipe (which originals to keep, which augmentation chain and
jitter seed to apply per generated copy), so the numbers below are
exactly what an execution would produce.
"""

from collections import Counter

from cervix_cad.balancing import plan_balancing


def describe(title: str, class_counts: dict[str, int], scheme: str) -> None:
    print(f"== {title} ({scheme}) ==")
    print(f"raw counts: {class_counts}  (total {sum(class_counts.values())})")

    plan = plan_balancing(class_counts, scheme, rng_seed=0)
    stages = " -> ".join(str(t) for t in plan.stage_targets)
    print(f"per-class target after each stage: {stages}")

    planned = plan.planned_counts(class_counts)
    for label in class_counts:
        kept = len(plan.keep[label])
        generated = sum(1 for e in plan.entries if e.label == label)
        print(
            f"  {label}: keep {kept} originals, generate {generated} "
            f"copies -> {planned[label]}"
        )

    ops = Counter(op for e in plan.entries for op in e.chain)
    print(f"augmentation ops used: {dict(ops)}")
    print(f"balanced total: {sum(planned.values())}")
    print()


def main() -> None:
    # a screening corpus where abnormal findings dominate
    describe("screening set", {"normal": 75, "abnormal": 374}, "binary")

    # a typing corpus with three transformation-zone classes; note the
    # fivefold-then-fivefold growth anchored to the smallest class (63)
    describe("typing set", {"type1": 226, "type2": 63, "type3": 87}, "ternary")


if __name__ == "__main__":
    main()
