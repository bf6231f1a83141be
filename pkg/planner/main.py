if __name__ == "__main__":
    from planner.solve import main
    raise SystemExit(main())
