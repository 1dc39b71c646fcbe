"""Generate the interview fixtures: the P4-scale interview (92 interviewee
statements) plus two shorter interviews, P1 and P2.

The statements are assembled from short clauses about an ML platform so that
the offline synthetic model finds topics in most of them. Run from the
repository root:

    python3 scripts/gen_p4_fixture.py
"""
import csv
import json
import random

OUT = "fixtures"

CLAUSES = {
    "pricing": [
        "the pricing page never told me what a month would cost",
        "our budget got eaten by one large training job",
        "the invoice arrived with charges nobody could explain",
        "it felt expensive compared to running our own machines",
        "billing by the minute made planning harder",
    ],
    "onboarding": [
        "setup took most of the first week",
        "the install script failed on two of our laptops",
        "getting started meant reading three different guides",
        "onboarding new hires still takes a full day",
    ],
    "docs": [
        "the documentation skips the parts we actually need",
        "every tutorial assumes a different version",
        "I wanted one complete example for batch jobs",
        "the docs for the command line are out of date",
    ],
    "performance": [
        "gpu queues were long in the afternoon",
        "notebooks get slow once the dataset grows",
        "we hit memory limits on the default instance",
        "latency on the hosted endpoint varies a lot",
    ],
    "sharing": [
        "sharing results with my team means exporting screenshots",
        "a colleague could not open my workspace",
        "handoff between analysts loses the context",
    ],
    "trust": [
        "I do not fully trust the automatic labels",
        "when the summary was wrong nobody noticed for weeks",
        "accuracy matters more to us than speed",
    ],
    "support": [
        "a support ticket took four days to get an answer",
        "the help desk closed my question without a fix",
    ],
    "security": [
        "our security review blocked the rollout for a month",
        "permission settings are too coarse for contractors",
        "compliance wants an audit trail for every change",
    ],
    "integration": [
        "the api does not cover the features we use most",
        "we built our own pipeline around the scheduler",
        "export to our warehouse is a manual step",
    ],
}

FILLER = [
    "Honestly it depends on the week.",
    "I would say that is mostly right.",
    "We are a group of six people.",
    "That was before the reorganisation.",
    "I do not remember the details now.",
    "Mostly we work on forecasting models.",
]

QUESTIONS = [
    "Can you tell me more about that?",
    "How did that affect your work?",
    "What happened next?",
    "How often does that come up?",
    "What would you change first?",
    "Who else was involved?",
    "How did you work around it?",
    "Is there anything else on that point?",
]


def sentence(clause):
    return clause[0].upper() + clause[1:] + "."


def interview(label, seed, statements):
    rng = random.Random(seed)
    themes = sorted(CLAUSES)
    rows = [("INTERVIEWER", "Thanks for joining. How long have you used the platform?")]
    for i in range(statements):
        roll = rng.random()
        if roll < 0.1:
            text = rng.choice(FILLER)
        elif roll < 0.6:
            text = sentence(rng.choice(CLAUSES[rng.choice(themes)]))
        else:
            a, b = rng.sample(themes, 2)
            text = sentence(rng.choice(CLAUSES[a])) + " " + sentence(
                rng.choice(CLAUSES[b])
            )
        rows.append((label, text))
        if i < statements - 1:
            rows.append(("INTERVIEWER", QUESTIONS[i % len(QUESTIONS)]))
    with open(f"{OUT}/{label.lower()}_interview.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["speaker", "text"])
        w.writerows(rows)


def main():
    interview("P1", 1, 30)
    interview("P2", 2, 40)
    interview("P4", 4, 92)
    objectives = [
        {"id": "RO1", "text": "Understand how researchers adopt and come to trust the platform"},
        {"id": "RO2", "text": "Identify technical obstacles in day-to-day work"},
        {"id": "RO3", "text": "Understand how cost is perceived and managed"},
        {"id": "RO4", "text": "Understand collaboration and governance needs"},
    ]
    with open(f"{OUT}/objectives.json", "w") as f:
        json.dump(objectives, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
