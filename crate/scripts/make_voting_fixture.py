"""Writes voting-schema rows with random values (default: the bundled 200-row fixture).

Usage: make_voting_fixture.py [output.csv] [rows]
"""
import csv
import random
import sys

CITIES = [1, 2, 3, 4, 14, 5, 6, 13, 15, 8]
TREATMENTS = ["Control", "Civic Duty", "Hawthorne", "Self", "Neighbors"]

rng = random.Random(20080601)
out = csv.writer(open(sys.argv[1] if len(sys.argv) > 1 else "voting_fixture.csv", "w", newline=""))
out.writerow(["yob", "sex", "hh_size", "p2000", "p2002", "p2004", "g2000", "g2002", "city", "treatment", "p2006"])
for i in range(int(sys.argv[2]) if len(sys.argv) > 2 else 200):
    # Years on and next to every bin edge are overrepresented.
    yob = rng.choice([1942, 1943, 1951, 1952, 1958, 1959, 1965, 1966]) if i % 4 == 0 else rng.randint(1910, 1985)
    sex = rng.choice(["male", "female"])
    hh = rng.choice([1, 2, 2, 3, 4, 5, 6, 8])
    hist = [rng.choice(["yes", "no"]) if k < 3 else str(rng.randint(0, 1)) for k in range(5)]
    t = rng.choices(range(5), weights=[5, 1, 1, 1, 1])[0]
    treatment = TREATMENTS[t] if i % 3 else str(t + 1)
    city = CITIES[i % len(CITIES)]
    voted = rng.choice(["Yes", "No"])
    out.writerow([yob, sex, hh, *hist, city, treatment, voted])
