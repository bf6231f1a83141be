from planner import plan

if __name__ == "__main__":
    raise SystemExit(plan())
