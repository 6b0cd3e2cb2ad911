from faciesml.cli import main

main()
